#!/usr/bin/env python3
"""Smoke test for the `vpg` Python extension module.

Builds nothing itself — expects the extension to exist already:

    cargo build -p vpg-python --release

Then run:

    python3 python/smoke_test.py
"""

import json
import os
import shutil
import sys
import tempfile

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    candidates = [
        os.path.join(REPO_ROOT, "target", profile, "libvpg.so")
        for profile in ("release", "debug")
    ]
    built = next((p for p in candidates if os.path.exists(p)), None)
    if built is None:
        sys.exit(
            "libvpg.so not found; build it first: cargo build -p vpg-python --release"
        )
    stage = tempfile.mkdtemp(prefix="vpg-py-")
    shutil.copy(built, os.path.join(stage, "vpg.so"))
    sys.path.insert(0, stage)
    import vpg  # noqa: E402

    return vpg


def check(name, condition, detail=""):
    if condition:
        print(f"[PASS] {name}")
    else:
        print(f"[FAIL] {name} {detail}")
        sys.exit(1)


def main():
    vpg = load_module()
    work = tempfile.mkdtemp(prefix="vpg-smoke-")
    scenes = os.path.join(work, "scenes.jsonl")
    products = os.path.join(work, "products.jsonl")
    truth = os.path.join(work, "truth.jsonl")

    world = {
        "seed": 3,
        "dimension": 48,
        "products": 120,
        "scenes": 150,
        "noise_sigma": 0.0,
    }

    # distance primitives
    check("euclidean identity", vpg.euclidean_distance([0.5] * 8, [0.5] * 8) == 0.0)
    d = vpg.euclidean_distance([1.0, 0.0], [0.0, 1.0])
    check("euclidean unit basis", abs(d - 2**0.5) < 1e-9, f"got {d}")
    zeros, ones = bytes(128), bytes([0xFF]) * 128
    check("hamming complement", vpg.hamming_distance(zeros, ones) == 1024)
    sig1 = vpg.near_dup_signature([0.1] * 32)
    sig2 = vpg.near_dup_signature([0.1] * 32)
    check("near-dup determinism", sig1 == sig2)
    code = vpg.binarize([1.0] * 1024, [0.0] * 1024)
    check("binarize all-ones", all(b == 0xFF for b in code))

    # corpus generation + full engine flow
    n_scenes, n_products = vpg.generate_world(world, scenes, products, truth)
    check("generate counts", (n_scenes, n_products) == (150, 120))

    engine = vpg.Engine(
        os.path.join(work, "store"), os.path.join(work, "index"), world=world
    )
    check("backfill", engine.backfill(scenes) == 150)
    check("append products", engine.append_products(products) == 120)
    report = engine.build_indexes()
    check("index build", report["objects_indexed"] > 0, json.dumps(report))
    cal = engine.calibrate()
    check("calibration", "threshold" in cal)
    check("engine ready", engine.ready())

    with open(products) as fh:
        product_sig = json.loads(fh.readline())["signature"]
    with open(scenes) as fh:
        scene_sig = json.loads(fh.readline())["signature"]

    result = engine.reverse(product_sig)
    check("reverse returns results", len(result["results"]) > 0, json.dumps(result)[:200])
    check(
        "reverse trace conserves",
        result["trace"]["returned"] == len(result["results"]),
    )

    fwd = engine.forward(scene_sig, gender="f", country="US")
    check("forward returns products", 0 < len(fwd["products"]) <= 3)
    check("forward cold miss", fwd["served_from_cache"] is False)
    fwd = engine.forward(scene_sig, gender="f", country="US")
    check("forward cache hit", fwd["served_from_cache"] is True)

    # ground truth: every forward product is actually in the scene
    scene_truth = {}
    for line in open(truth):
        row = json.loads(line)
        scene_truth[row["signature"]] = row
    product_truth = {
        row["signature"]: row["product_ids"][0]
        for row in map(json.loads, open(truth))
        if row["kind"] == "product"
    }
    scene_products = set(scene_truth[scene_sig]["product_ids"])
    got = {product_truth[p["signature"]] for p in fwd["products"]}
    check("forward products match ground truth", got <= scene_products, f"{got} vs {scene_products}")

    metrics = engine.metrics()
    check("metrics shape", "store_hit_rate" in metrics and "cache" in metrics)

    # unknown signature surfaces as KeyError
    try:
        engine.reverse("0" * 32)
        check("unknown signature raises", False)
    except KeyError:
        check("unknown signature raises", True)

    print("all smoke checks passed")


if __name__ == "__main__":
    main()
