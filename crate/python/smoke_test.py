"""Builds the extension with cargo, imports it and runs a short pipeline.

Usage: python3 python/smoke_test.py
"""

import os
import shutil
import subprocess
import sys
import sysconfig
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def build_module(dest):
    subprocess.run(
        ["cargo", "build", "--release", "-p", "ulfine-py"],
        cwd=ROOT,
        check=True,
    )
    lib = os.path.join(ROOT, "target", "release", "libulfine_py.so")
    suffix = sysconfig.get_config_var("EXT_SUFFIX") or ".so"
    shutil.copy(lib, os.path.join(dest, "ulfine_py" + suffix))


def main():
    with tempfile.TemporaryDirectory() as tmp:
        build_module(tmp)
        sys.path.insert(0, tmp)
        import ulfine_py as u

        counts = u.class_counts(100, 50.0, 10)
        assert counts[0] == 100 and counts[-1] == 2, counts
        assert u.classification_stability([1.0, 0.0]) == 0.5

        c = u.Config()
        for key, value in [
            ("data.classes", "5"),
            ("data.dim", "16"),
            ("data.train_per_class", "200"),
            ("data.test_per_class", "40"),
            ("split.head_labeled", "50"),
            ("split.labeled_imbalance", "10"),
            ("split.head_unlabeled", "150"),
            ("split.unlabeled_imbalance", "10"),
            ("train.iterations", "300"),
            ("train.eval_every", "100"),
        ]:
            c.set(key, value)

        runs, table = u.ablate(c, ["lp", "full"])
        print(table, end="")
        final = {arm: series[-1] for arm, series in runs}
        for arm, r in final.items():
            print(f"{arm}: acc={r.accuracy:.3f} tail={r.tail_accuracy} S={r.stability:.3f}")
            assert 0.0 <= r.accuracy <= 1.0

        t = u.Trainer(c.for_arm("full"))
        for _ in range(20):
            t.step()
        path = os.path.join(tmp, "ck.ulfc")
        t.save_checkpoint(path)
        again = u.Trainer.from_checkpoint(path)
        assert again.evaluate().to_json() == t.evaluate().to_json()
        print("smoke test passed")


if __name__ == "__main__":
    main()
