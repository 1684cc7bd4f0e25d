use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::{PyDict, PyModule};

fn run_py(code: &str) {
    Python::attach(|py| {
        let m = PyModule::new(py, "ulfine_py").unwrap();
        ulfine_py::register(&m).unwrap();
        let globals = PyDict::new(py);
        globals.set_item("u", m).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.display(py);
            panic!("python snippet failed");
        }
    });
}

#[test]
fn numeric_helpers() {
    run_py(
        r#"
assert u.class_counts(500, 100.0, 10)[0] == 500
assert abs(u.imbalance_increase(500, 5, 4000, 4000) - (-98.8764)) < 1e-3
a = u.align_logits([0.0, 2.0, 10.0], [1.0, -1.0, 3.0])
assert max(a) == 3.0 and min(a) == -1.0
assert u.align_logits([1.0, 1.0], [1.0, 3.0]) == [2.0, 2.0]
assert u.fuse([1.0, 2.0], [5.0, 6.0], 1.0) == [1.0, 2.0]
assert u.classification_stability([1.0, 0.0]) == 0.5
loss, grad = u.orthogonal_loss([[1.0, 0.0], [0.0, 1.0]])
assert loss == 0.0 and grad == [[0.0, 0.0], [0.0, 0.0]]
assert u.alpha_coefficients([0.25] * 4, 0.9) == [0.9] * 4
"#,
    );
}

#[test]
fn errors_map_to_python_exceptions() {
    run_py(
        r#"
c = u.Config()
try:
    c.set("no.such_key", "1")
    raise SystemExit("expected ValueError")
except ValueError:
    pass
try:
    u.load_embeddings("/nonexistent/file.ulfe")
    raise SystemExit("expected OSError")
except OSError:
    pass
try:
    c.for_arm("bogus")
    raise SystemExit("expected ValueError")
except ValueError:
    pass
"#,
    );
}

#[test]
fn config_round_trip_and_arms() {
    run_py(
        r#"
c = u.Config()
c.set("train.seed", "9")
assert c.get("train.seed") == "9"
assert u.Config(c.to_text()).to_text() == c.to_text()
assert "fusion.eta" in u.Config.keys()
lp = c.for_arm("lp")
assert lp.get("fusion.eta") == "1" and lp.get("model.train_adapter") == "false"
"#,
    );
}

#[test]
fn trainer_steps_evaluates_and_checkpoints() {
    let dir = tempfile_dir();
    run_py(&format!(
        r#"
import os
c = u.Config()
for k, v in [("data.classes", "4"), ("data.dim", "8"), ("data.train_per_class", "60"),
             ("data.test_per_class", "20"), ("split.head_labeled", "20"),
             ("split.labeled_imbalance", "5"), ("split.head_unlabeled", "30"),
             ("split.unlabeled_imbalance", "5"), ("train.batch_labeled", "8"),
             ("train.batch_unlabeled", "8"), ("train.iterations", "10"), ("train.eval_every", "5")]:
    c.set(k, v)
t = u.Trainer(c)
assert t.labeled_counts[0] == 20
for _ in range(10):
    l, un, o, total = t.step()
    assert abs(l + un + o - total) < 1e-12
assert t.iteration == 10
r = t.evaluate()
assert r.iteration == 10 and 0.0 <= r.accuracy <= 1.0
assert len(t.predict()) == 80
path = os.path.join({dir:?}, "t.ulfc")
t.save_checkpoint(path)
t2 = u.Trainer.from_checkpoint(path)
assert t2.iteration == 10 and t2.text_prototypes == t.text_prototypes
assert t2.evaluate().to_json() == r.to_json()
series = u.run(c)
assert [s.iteration for s in series] == [0, 5, 10]
# Same model; the loss window differs because run() resets it at each record.
last = series[-1]
assert (last.accuracy, last.stability, last.pl_histogram) == (r.accuracy, r.stability, r.pl_histogram)
runs, table = u.ablate(c, ["lp", "full"])
assert [a for a, _ in runs] == ["lp", "full"] and table.count("| x") == 2
assert u.reports_to_csv(series).count("\n") == 4
"#,
        dir = dir.to_str().unwrap()
    ));
}

#[test]
fn embedding_files_round_trip() {
    let dir = tempfile_dir();
    run_py(&format!(
        r#"
import os
x, y = u.synth_embeddings(3, 4, 5, 1.0, 0.1, 1)
assert len(x) == 15 and y[:5] == [0] * 5
p = os.path.join({dir:?}, "e.ulfe")
u.save_embeddings(p, x, y, 3)
x2, y2, c = u.load_embeddings(p)
assert x2 == x and y2 == y and c == 3
"#,
        dir = dir.to_str().unwrap()
    ));
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!(
        "ulfine_py_{}_{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    std::fs::create_dir_all(&d).unwrap();
    d
}
