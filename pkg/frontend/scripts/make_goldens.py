"""Regenerate the golden documents under test/golden/ from a live server.

Trains the toy texture classifier with the `datapaths` CLI, then drives one
full analysis session over plain HTTP against `datapaths serve` (attack,
extractions, session, brush, contribution) and saves the raw responses the
UI tests replay. Run from frontend/:

    python3 scripts/make_goldens.py

Takes about a minute; most of it is the toy training run.
"""

import json
import pathlib
import subprocess
import sys
import tempfile
import time
import urllib.error
import urllib.request

PORT = 8613
BASE = f"http://127.0.0.1:{PORT}"
OUT = pathlib.Path(__file__).resolve().parent.parent / "test" / "golden"

EXTRACT = {"l1_weight": 0.02, "learning_rate": 0.05, "iterations": 500, "seed": 0}
ATTACK = {"epsilon": 0.1, "alpha": 0.01, "mu": 0.9, "steps": 10}

# gated layer the analyst brushes on, and the earlier layer whose treemap
# re-renders with the traced contributions
BRUSH_LAYER = 4
EARLIER_LAYER = 1


def call(method, path, body=None):
    data = None if body is None else json.dumps(body).encode()
    req = urllib.request.Request(BASE + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as resp:
        return json.loads(resp.read())


def wait_job(job_id):
    for _ in range(1200):
        doc = call("GET", f"/jobs/{job_id}")
        if doc["status"] == "done":
            return doc["result"]
        if doc["status"] == "failed":
            raise RuntimeError(f"job failed: {doc['error']}")
        time.sleep(0.1)
    raise RuntimeError("job timed out")


def image_doc(dataset, index):
    shape = dataset["images"]["shape"]  # (n, channels, h, w)
    per = shape[1] * shape[2] * shape[3]
    return {
        "version": 1,
        "image": {"shape": shape[1:],
                  "data": dataset["images"]["data"][index * per:(index + 1) * per]},
        "label": dataset["labels"][index],
    }


def save(name, doc):
    (OUT / name).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(f"  wrote {name}")


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    work = pathlib.Path(tempfile.mkdtemp(prefix="goldens-"))
    print("training toy model...")
    subprocess.run([sys.executable, "-m", "datapaths.cli", "train-toy",
                    "--out-dir", str(work)], check=True)
    model_doc = json.loads((work / "model.json").read_text())
    test_set = json.loads((work / "test.json").read_text())

    proc = subprocess.Popen(
        [sys.executable, "-m", "datapaths.cli", "serve", "--data-dir",
         str(work / "store"), "--port", str(PORT), "--workers", "1"],
    )
    try:
        for _ in range(100):
            try:
                call("GET", "/health")
                break
            except (urllib.error.URLError, ConnectionError):
                time.sleep(0.1)
        else:
            raise RuntimeError("server did not come up")

        model_id = call("POST", "/models", model_doc)["model_id"]
        meta = call("GET", f"/models/{model_id}")

        source_index = 0
        source_label = test_set["labels"][source_index]
        source_id = call("POST", "/examples", image_doc(test_set, source_index))["example_id"]
        attack = wait_job(call("POST", "/jobs/attack", {
            "model_id": model_id, "example_id": source_id,
            "true_label": source_label, "params": ATTACK,
        })["job_id"])
        adv_id = attack["example_id"]
        flipped = attack["predicted_label"]

        target_index = next(i for i, lab in enumerate(test_set["labels"])
                            if lab == flipped and i != source_index)
        target_id = call("POST", "/examples", image_doc(test_set, target_index))["example_id"]

        dp = {}
        for role, example_id in (("source", source_id), ("adversarial", adv_id),
                                 ("target", target_id)):
            result = wait_job(call("POST", "/jobs/extract", {
                "model_id": model_id, "example_id": example_id, "params": EXTRACT,
            })["job_id"])
            dp[role] = result["datapath_id"]

        session_id = call("POST", "/sessions", {
            "model_id": model_id,
            "triplet": {"source": source_id, "adversarial": adv_id,
                        "targets": [target_id], "source_label": source_label,
                        "predicted_label": flipped},
            "datapaths": {"source": dp["source"], "adversarial": dp["adversarial"],
                          "targets": [dp["target"]]},
        })["session_id"]

        save("model_meta.json", meta)
        save("river.json",
             call("GET", f"/sessions/{session_id}/river?width=960&height=320&scale=40"))
        save("treemap_brush_layer.json",
             call("GET",
                  f"/sessions/{session_id}/layers/{BRUSH_LAYER}/treemap?width=600&height=400"))
        save("treemap_earlier_layer.json",
             call("GET",
                  f"/sessions/{session_id}/layers/{EARLIER_LAYER}/treemap?width=600&height=400"))
        fills_act = call(
            "GET", f"/sessions/{session_id}/layers/{BRUSH_LAYER}/feature-maps"
                   "?encoding=activation_diff")
        save("fills_activation.json", fills_act)

        # brush the map that moved the most under the attack
        brush_fm = int(max(fills_act["values"], key=lambda k: abs(fills_act["values"][k])))
        grid = call("GET", f"/activations/{session_id}/{adv_id}/{brush_fm}")
        save("activation_grid.json", grid)

        cells = grid["shape"][0] * grid["shape"][1]
        full_mask = {"shape": grid["shape"], "runs": [0, cells]}
        save("mask_full.json", full_mask)
        call("PUT", f"/sessions/{session_id}/masks/{brush_fm}", full_mask)
        contribution = wait_job(call("POST", "/jobs/contribution", {
            "model_id": model_id, "example_ids": [adv_id], "target_fm": brush_fm,
            "params": EXTRACT, "session_id": session_id,
        })["job_id"])
        save("contribution.json",
             call("GET", f"/contributions/{contribution['contribution_id']}"))
        save("fills_contribution.json",
             call("GET", f"/sessions/{session_id}/layers/{EARLIER_LAYER}/feature-maps"
                         "?encoding=contribution"))
        save("session.json", call("GET", f"/sessions/{session_id}"))
        save("meta.json", {
            "model_id": model_id, "session_id": session_id,
            "source_id": source_id, "adversarial_id": adv_id, "target_id": target_id,
            "datapaths": dp, "brush_layer": BRUSH_LAYER, "earlier_layer": EARLIER_LAYER,
            "brush_fm": brush_fm,
            "contribution_id": contribution["contribution_id"],
        })
    finally:
        proc.terminate()
        proc.wait()


if __name__ == "__main__":
    main()
