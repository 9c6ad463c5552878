#!/usr/bin/env python3
# Stand-in model process: echoes inputs, fakes epochs, fails on request.
import json
import sys

assert sys.argv[1] == "--model"


def reply(obj):
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def serve(until_resume=False):
    for line in sys.stdin:
        req = json.loads(line)
        op = req["op"]
        if op == "resume" and until_resume:
            return
        if op == "shutdown":
            sys.exit(0)
        if op == "generate":
            if any("FAIL" in i for i in req["inputs"]):
                reply({"ok": False, "error": "forced failure"})
            else:
                reply({"ok": True, "outputs": ["<pad> " + i + "</s>" for i in req["inputs"]]})
        elif op == "register":
            reply({"ok": True, "registered": req["tokens"]})
        elif op == "fine_tune":
            n = req["config"]["epochs"]
            for k in range(1, n + 1):
                reply({"event": "epoch", "epoch": k, "loss": 1.0 / k})
                serve(until_resume=True)
            reply({"event": "done", "epochs": n, "pairs_seen": n * len(req["pairs"]), "loss": 1.0 / n})
    sys.exit(0)


serve()
