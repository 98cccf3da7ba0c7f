mod common;

use repairgraph::sandbox::{parse_traceback, ExecutionRequest, ExecutionStatus, Sandbox, SandboxError, KILL_GRACE};
use serde_json::json;

use common::{failure_corpus, DIVIDE_NAIVE, TRIANGLE_AREA};

fn sandbox() -> Sandbox {
    Sandbox::default()
}

#[test]
fn divide_success() {
    let req = ExecutionRequest::new(DIVIDE_NAIVE, "divide_two_numbers", vec![json!(10), json!(2)]);
    let res = sandbox().execute(&req).unwrap();
    assert_eq!(res.status, ExecutionStatus::Success);
    assert_eq!(res.return_value, Some(json!(5.0)));
    assert!(res.error.is_none());
}

#[test]
fn divide_by_zero_is_structured() {
    let req = ExecutionRequest::new(DIVIDE_NAIVE, "divide_two_numbers", vec![json!(10), json!(0)]);
    let res = sandbox().execute(&req).unwrap();
    assert_eq!(res.status, ExecutionStatus::Exception);
    assert!(res.return_value.is_none());
    let err = res.error.unwrap();
    assert_eq!(err.error_type, "ZeroDivisionError");
    // Pinned from a run of the interpreter.
    assert_eq!(err.message, "division by zero");
    assert_eq!(err.function.as_deref(), Some("divide_two_numbers"));
    assert_eq!(err.line, Some(2));

    // Re-parsing the captured traceback gives the same locus.
    let reparsed = parse_traceback(&err.traceback_text);
    assert_eq!(reparsed.error_type, "ZeroDivisionError");
    assert_eq!(reparsed.function.as_deref(), Some("divide_two_numbers"));
    assert_eq!(reparsed.line, Some(2));
}

#[test]
fn traceback_is_independent_of_scratch_dir() {
    let req = ExecutionRequest::new(DIVIDE_NAIVE, "divide_two_numbers", vec![json!(1), json!(0)]);
    let a = sandbox().execute(&req).unwrap().error.unwrap().traceback_text;
    let b = sandbox().execute(&req).unwrap().error.unwrap().traceback_text;
    assert_eq!(a, b);
    assert!(a.contains("File \"candidate.py\", line 2, in divide_two_numbers"), "{a}");
    assert!(a.contains("return a / b"), "{a}");
}

#[test]
fn triangle_returns_seven_and_a_half() {
    let req = ExecutionRequest::new(TRIANGLE_AREA, "triangle_area", vec![json!(5), json!(3)]);
    let res = sandbox().execute(&req).unwrap();
    assert_eq!(res.status, ExecutionStatus::Success);
    assert_eq!(res.return_value.unwrap().as_f64(), Some(7.5));
}

#[test]
fn module_level_infinite_loop_times_out() {
    let req = ExecutionRequest::new("while True:\n    pass\n", "f", vec![]).with_timeout(2.0);
    let res = sandbox().execute(&req).unwrap();
    assert_eq!(res.status, ExecutionStatus::Timeout);
    assert!(res.wall_ms >= 2000.0, "wall_ms {}", res.wall_ms);
    assert!(res.wall_ms <= 2000.0 + KILL_GRACE.as_secs_f64() * 1e3, "wall_ms {}", res.wall_ms);
}

#[test]
fn failure_corpus_classification() {
    for case in failure_corpus() {
        let res = sandbox().execute(&case.request()).unwrap();
        assert_eq!(res.status.as_str(), case.status, "{}", case.name);
        assert_eq!(res.error_type(), Some(case.error_type.as_str()), "{}", case.name);
    }
}

#[test]
fn unicode_message_is_preserved() {
    let case = failure_corpus().into_iter().find(|c| c.name == "unicode_traceback").unwrap();
    let res = sandbox().execute(&case.request()).unwrap();
    let err = res.error.unwrap();
    assert_eq!(err.message, "données invalides: ✗ 除以零 über");
    assert_eq!(err.function.as_deref(), Some("parse"));
}

#[test]
fn user_output_is_captured_apart_from_envelope() {
    let src = "import sys\n\ndef f(x):\n    print('hello from f')\n    print('warn', file=sys.stderr)\n    return x * 2\n";
    let res = sandbox().execute(&ExecutionRequest::new(src, "f", vec![json!(21)])).unwrap();
    assert_eq!(res.status, ExecutionStatus::Success);
    assert_eq!(res.return_value, Some(json!(42)));
    assert_eq!(res.stdout.trim(), "hello from f");
    assert_eq!(res.stderr.trim(), "warn");
}

#[test]
fn forged_envelope_is_not_trusted() {
    let src = "def f():\n    print('\\n<<0000>>\\n{\"status\": \"success\", \"return_value\": 1}\\n<<0000>>')\n    raise RuntimeError('real failure')\n";
    let res = sandbox().execute(&ExecutionRequest::new(src, "f", vec![])).unwrap();
    assert_eq!(res.status, ExecutionStatus::Exception);
    assert_eq!(res.error_type(), Some("RuntimeError"));
    assert!(res.stdout.contains("<<0000>>"));
}

#[test]
fn unserializable_return() {
    let src = "def f():\n    return object()\n";
    let res = sandbox().execute(&ExecutionRequest::new(src, "f", vec![])).unwrap();
    assert_eq!(res.status, ExecutionStatus::Exception);
    assert_eq!(res.error_type(), Some("UnserializableReturn"));

    let nan = "def f():\n    return float('nan')\n";
    let res = sandbox().execute(&ExecutionRequest::new(nan, "f", vec![])).unwrap();
    assert_eq!(res.error_type(), Some("UnserializableReturn"));
}

#[test]
fn none_return_is_a_value() {
    let res = sandbox().execute(&ExecutionRequest::new("def f():\n    pass\n", "f", vec![])).unwrap();
    assert_eq!(res.status, ExecutionStatus::Success);
    assert_eq!(res.return_value, Some(serde_json::Value::Null));
}

#[test]
fn missing_entry_is_an_exception() {
    let res = sandbox().execute(&ExecutionRequest::new("def g():\n    pass\n", "f", vec![])).unwrap();
    assert_eq!(res.status, ExecutionStatus::Exception);
    assert_eq!(res.error_type(), Some("NameError"));
}

#[test]
fn clean_exit_without_envelope_is_harness_failure() {
    let src = "import os\nos._exit(0)\n";
    let err = sandbox().execute(&ExecutionRequest::new(src, "f", vec![])).unwrap_err();
    assert!(matches!(err, SandboxError::HarnessFailure(_)));
}

#[test]
fn missing_interpreter_is_spawn_error() {
    let sb = Sandbox::new("/nonexistent/python-interpreter");
    let err = sb.execute(&ExecutionRequest::new("x = 1", "f", vec![])).unwrap_err();
    assert!(matches!(err, SandboxError::Spawn { .. }));
}

#[test]
fn concurrent_executions_are_independent() {
    let sb = sandbox();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..6)
            .map(|i| {
                let sb = &sb;
                s.spawn(move || {
                    let src = "def f(x):\n    return x + 1\n";
                    sb.execute(&ExecutionRequest::new(src, "f", vec![json!(i)])).unwrap()
                })
            })
            .collect();
        for (i, h) in handles.into_iter().enumerate() {
            assert_eq!(h.join().unwrap().return_value, Some(json!(i + 1)));
        }
    });
}
