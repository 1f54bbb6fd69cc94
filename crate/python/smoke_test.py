#!/usr/bin/env python3
"""End-to-end smoke test for the stg_py extension module.

Builds the cdylib with cargo, copies it next to this script as stg_py.so,
and drives the whole pipeline: synthetic suite -> joint training with
dynamics logging -> data maps -> k-means + fuzzification -> specialist
ensemble -> evaluation.
"""

import json
import math
import pathlib
import shutil
import subprocess
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "stg-py"], cwd=ROOT, check=True
    )
    built = ROOT / "target" / "release" / "libstg_py.so"
    if not built.exists():  # e.g. macOS
        built = ROOT / "target" / "release" / "libstg_py.dylib"
    shutil.copy2(built, HERE / "stg_py.so")
    sys.path.insert(0, str(HERE))
    import stg_py

    return stg_py


def approx(a, b, tol=1e-9):
    return abs(a - b) <= tol


def main():
    stg = build_and_import()
    tmp = pathlib.Path(tempfile.mkdtemp(prefix="stg_smoke_"))

    # --- loss / metric primitives ------------------------------------
    assert approx(stg.bce_pos_weighted(0.5, 1, 2.0), 2.0 * math.log(2.0), 1e-12)
    assert approx(stg.pos_weight_for_task([0] * 90 + [1] * 10), 9.0)
    assert approx(stg.f1(1, 1, 1, 0), 0.5)
    assert approx(stg.macro_f1([0.6, 0.8, 1.0]), 0.8)
    assert approx(stg.weighted_loss([0.9, 0.1], [1.0, 2.0]), 1.1, 1e-12)

    # --- suite + joint training with a persisted dynamics log --------
    spec = {
        "format": "stg-suite/1",
        "latent_classes": 4,
        "points_per_class": 12,
        "input_dim": 6,
        "noise": 0.6,
        "center_scale": 2.0,
        "test_fraction": 0.25,
        "seed": 9,
        "tasks": [
            {"type": "class", "class": 0},
            {"type": "union", "classes": [1, 2]},
            {"type": "complement_of", "task": 1},
            {"type": "random", "seed": 77},
        ],
    }
    suite = stg.Suite.from_json(json.dumps(spec))
    assert suite.n_tasks == 4
    n_train = suite.n_points("train")

    log_path = tmp / "dynamics.jsonl"
    log = stg.DynamicsLog(suite.n_tasks, n_train, str(log_path))
    model = stg.Model(suite.input_dim, 6, suite.n_tasks, seed=9)
    model.train(suite, log, epochs=10, learning_rate=0.4, batch_size=8, seed=9)
    log.flush()
    assert log.epoch_count == 10
    count, mean, std = log.moments(0, 0)
    assert count == 10 and 0.0 <= mean <= 1.0 and 0.0 <= std <= 0.5

    # reloading the log replays identical moments
    reloaded = stg.DynamicsLog.load(str(log_path))
    assert reloaded.moments(2, 5) == log.moments(2, 5)

    # --- data maps and task vectors ----------------------------------
    tensor = stg.DataMapTensor.compute(log, [5, 10])
    assert tensor.n_tasks == 4 and tensor.epochs == [5, 10]
    vectors = tensor.task_vectors()
    assert len(vectors) == 4 and len(vectors[0]) == 2 * n_train * 2

    tensor_path = tmp / "tensor.json"
    tensor.save(str(tensor_path))
    assert stg.DataMapTensor.load(str(tensor_path)).mu(1, 1) == tensor.mu(1, 1)

    # --- clustering + fuzzification -----------------------------------
    km = stg.kmeans(vectors, m=2, seed=9)
    assert len(km.centroids) == 2
    assert all(b <= a + 1e-12 for a, b in zip(km.inertia_history, km.inertia_history[1:]))

    soft = stg.fuzzify(vectors, km, 2.0)
    oracle = stg.eq1_reference(vectors, km, 2.0)
    for row_a, row_b in zip(soft.weights, oracle.weights):
        assert approx(sum(row_a), 1.0)
        assert all(abs(a - b) <= 1e-10 for a, b in zip(row_a, row_b))

    # complement pair (tasks 1 and 2) shares its membership row
    linf = max(abs(a - b) for a, b in zip(soft.weights[1], soft.weights[2]))
    assert linf <= 0.1, f"complement pair rows differ by {linf}"

    hard = soft.harden()
    assert sorted(set(hard.hard_assignment())) <= [0, 1]
    agreement, _ = stg.grouping_agreement(hard, hard.hard_assignment())
    assert agreement == 1.0

    memb_path = tmp / "memberships.json"
    soft.save(str(memb_path))
    assert stg.MembershipMatrix.load(str(memb_path)).weights == soft.weights

    # --- specialists and weighted-output combination ------------------
    ensemble = stg.train_specialists(
        soft, suite, hidden_dim=6, epochs=10, learning_rate=0.4, batch_size=8, seed=9
    )
    assert ensemble.m == 2
    x = suite.inputs("test")[0]
    combined = ensemble.predict(x)
    per_task, macro = ensemble.evaluate(suite, "test")
    assert len(per_task) == 4 and 0.0 <= macro <= 1.0

    # combining identical outputs is the identity (rows sum to 1)
    same = stg.combine_outputs(soft, [[0.25, 0.5, 0.75, 0.1], [0.25, 0.5, 0.75, 0.1]])
    assert all(approx(a, b, 1e-12) for a, b in zip(same, [0.25, 0.5, 0.75, 0.1]))

    # m = 1 reduction: all-ones memberships reproduce the plain model
    ones = stg.MembershipMatrix([[1.0]] * suite.n_tasks, 2.0)
    reduced = stg.train_specialists(
        ones, suite, hidden_dim=6, epochs=10, learning_rate=0.4, batch_size=8, seed=9
    )
    baseline = stg.Model(suite.input_dim, 6, suite.n_tasks, seed=9)
    blog = stg.DynamicsLog(suite.n_tasks, n_train)
    baseline.train(suite, blog, epochs=10, learning_rate=0.4, batch_size=8, seed=9)
    assert reduced.predict(x) == baseline.predict(x)

    # gradient check stays honest through the bindings
    err = baseline.grad_check(
        suite.inputs("train")[:6],
        [list(suite.labels("train", t))[:6] for t in range(suite.n_tasks)],
        [1.0] * suite.n_tasks,
        [1.0] * suite.n_tasks,
    )
    assert err <= 1e-4, f"grad check error {err}"

    print("combined head probabilities:", [round(p, 4) for p in combined])
    print(f"test macro-F1: {macro:.4f}")
    print("stg_py smoke test: OK")


if __name__ == "__main__":
    main()
