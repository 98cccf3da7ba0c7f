# Execution harness for candidate code. Reads one JSON request line on stdin:
#   {"nonce": str, "source_path": str, "entry": str, "args": [...]}
# and prints exactly one envelope on stdout:
#   <<NONCE>>\n{json}\n<<NONCE>>
import json
import linecache
import sys
import traceback

# Name the candidate is compiled under, so tracebacks do not leak the scratch path.
CANDIDATE = "candidate.py"


def _main():
    request = json.loads(sys.stdin.readline())
    sys.stdin.close()
    nonce = request["nonce"]
    source_path = request["source_path"]
    out = sys.stdout

    def emit(payload):
        marker = "<<" + nonce + ">>"
        out.write("\n" + marker + "\n" + json.dumps(payload) + "\n" + marker + "\n")
        out.flush()

    def user_traceback(exc):
        frames = [f for f in traceback.extract_tb(exc.__traceback__) if f.filename == CANDIDATE]
        lines = ["Traceback (most recent call last):\n"]
        lines.extend(traceback.StackSummary.from_list(frames).format())
        lines.extend(traceback.format_exception_only(type(exc), exc))
        return "".join(lines)

    def error(exc, text=None):
        return {
            "error_type": type(exc).__name__,
            "message": str(exc),
            "traceback_text": text if text is not None else user_traceback(exc),
        }

    with open(source_path, "r", encoding="utf-8") as fh:
        source = fh.read()
    linecache.cache[CANDIDATE] = (len(source), None, source.splitlines(True), CANDIDATE)

    try:
        code = compile(source, CANDIDATE, "exec")
    except SyntaxError as exc:
        text = "".join(traceback.format_exception_only(type(exc), exc))
        text = "Traceback (most recent call last):\n" + text
        emit({"status": "syntax_error", "error": error(exc, text)})
        return

    namespace = {"__name__": "candidate", "__file__": source_path}
    try:
        exec(code, namespace)
        fn = namespace.get(request["entry"])
        if not callable(fn):
            raise NameError("entry function %r is not defined" % request["entry"])
        value = fn(*request["args"])
    except BaseException as exc:  # noqa: B902 - SystemExit and friends are results too
        emit({"status": "exception", "error": error(exc)})
        return

    try:
        json.dumps(value, allow_nan=False)
    except (TypeError, ValueError) as exc:
        emit({
            "status": "exception",
            "error": {
                "error_type": "UnserializableReturn",
                "message": "return value of type %s is not JSON-representable: %s" % (type(value).__name__, exc),
                "traceback_text": "",
            },
        })
        return
    emit({"status": "success", "return_value": value})


if __name__ == "__main__":
    _main()
