"""Line-protocol model server used by the integration tests.

p(positive) is 1.0 when the text contains the token "good" and 0.0
otherwise. The first argument selects a misbehaviour for failure tests.
"""
import json
import sys
import time

MODE = sys.argv[1] if len(sys.argv) > 1 else "ok"


def send(message):
    sys.stdout.write(json.dumps(message) + "\n")
    sys.stdout.flush()


if MODE == "silent":
    time.sleep(30)
    sys.exit(0)
if MODE == "three-labels":
    send({"type": "hello", "name": "stub", "labels": ["a", "b", "c"], "version": 1})
    sys.exit(0)
if MODE == "old-version":
    send({"type": "hello", "name": "stub", "labels": ["negative", "positive"], "version": 0})
    sys.exit(0)

send({"type": "hello", "name": "stub-keyword", "labels": ["negative", "positive"], "version": 1})
if MODE == "exit-after-hello":
    sys.exit(0)

for line in sys.stdin:
    try:
        request = json.loads(line)
        rid = request["id"]
        texts = request["texts"]
    except (ValueError, KeyError) as exc:
        send({"type": "error", "id": None, "message": str(exc)})
        continue
    if MODE == "error":
        send({"type": "error", "id": rid, "message": "backend unavailable"})
        continue
    probs = [1.0 if "good" in t.lower().split() else 0.0 for t in texts]
    if MODE == "short" and probs:
        probs = probs[:-1]
    if MODE == "wrong-id":
        rid += 1
    if MODE == "out-of-range":
        probs = [p + 0.5 for p in probs]
    send({"type": "probs", "id": rid, "probs": probs})
