//! Random small graph definitions and a direct interpreter for them.

use rand::Rng;

use repairgraph::graph::{CompiledGraph, GraphError, NodeName, StateGraph, START};

/// Node i adds `add[i]` to the state, then goes to `edge[i]`, or to
/// `split[i]` when present and the state is odd. Index `n` means END.
#[derive(Debug, Clone)]
pub struct GraphSpec {
    pub add: Vec<i64>,
    pub edge: Vec<usize>,
    pub split: Vec<Option<usize>>,
}

pub fn random_spec<R: Rng>(rng: &mut R) -> GraphSpec {
    let n = rng.random_range(1..7);
    GraphSpec {
        add: (0..n).map(|_| rng.random_range(-3..4)).collect(),
        edge: (0..n).map(|_| rng.random_range(0..=n)).collect(),
        split: (0..n)
            .map(|_| rng.random_bool(0.5).then(|| rng.random_range(0..=n)))
            .collect(),
    }
}

fn target(n: usize, i: usize) -> NodeName {
    if i == n {
        NodeName::end()
    } else {
        NodeName::new(format!("n{i}"))
    }
}

/// Visited node indices, final value, and whether END was reached.
pub fn reference_run(spec: &GraphSpec, init: i64, max_steps: usize) -> (Vec<usize>, i64, bool) {
    let n = spec.add.len();
    let (mut cur, mut value, mut path) = (0usize, init, Vec::new());
    loop {
        value += spec.add[cur];
        path.push(cur);
        let next = match spec.split[cur] {
            Some(alt) if value.rem_euclid(2) == 1 => alt,
            _ => spec.edge[cur],
        };
        if next == n {
            return (path, value, true);
        }
        if path.len() >= max_steps {
            return (path, value, false);
        }
        cur = next;
    }
}

/// Whether END is statically reachable from n0, counting both branches.
pub fn reference_reaches_end(spec: &GraphSpec) -> bool {
    let n = spec.add.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    while let Some(i) = stack.pop() {
        if i == n {
            return true;
        }
        if std::mem::replace(&mut seen[i], true) {
            continue;
        }
        stack.push(spec.edge[i]);
        stack.extend(spec.split[i]);
    }
    false
}

pub fn build(spec: &GraphSpec) -> Result<CompiledGraph<i64>, GraphError> {
    let n = spec.add.len();
    let mut g: StateGraph<i64> = StateGraph::new();
    g.add_edge(START, "n0")?;
    for i in 0..n {
        let add = spec.add[i];
        g.add_node(format!("n{i}"), move |v: i64| Ok(v + add))?;
        let straight = target(n, spec.edge[i]);
        match spec.split[i] {
            Some(alt) => {
                let odd = target(n, alt);
                let candidates = [straight.clone(), odd.clone()];
                g.add_conditional_edge(
                    format!("n{i}"),
                    move |v: &i64| if v.rem_euclid(2) == 1 { odd.clone() } else { straight.clone() },
                    candidates,
                )?;
            }
            None => {
                g.add_edge(format!("n{i}"), straight)?;
            }
        }
    }
    g.compile()
}
