use std::ffi::CString;

use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run_python(code: &str) {
    Python::initialize();
    Python::attach(|py| {
        let module = wrap_pymodule!(semkd_py::semkd_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("semkd", module).unwrap();
        let code = CString::new(code).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python snippet failed: {e}");
        }
    });
}

#[test]
fn semantic_table_and_clustering() {
    run_python(
        r#"
t = semkd.SemanticTable.parse("a 1 1\nb 1 2\nc 5 1\nd 5 2.5\nn 4.5 1.5\n", 2)
assert len(t) == 5 and t.dim == 2 and "a" in t
assert t.get("c") == [5.0, 1.0]
m = semkd.cluster_base_classes(t, ["a", "b", "c", "d"], 2, seed=1)
groups = dict(m.assignment)
assert groups["a"] == groups["b"] != groups["c"] == groups["d"]
assert m.assign(t, "n") == groups["c"]
try:
    t.get("zzz")
    raise AssertionError("expected KeyError")
except KeyError:
    pass
try:
    semkd.cluster_base_classes(t, ["a"], 2, seed=0)
    raise AssertionError("expected ValueError")
except ValueError:
    pass
centers, labels, sse = semkd.kmeans([[0.0], [1.0], [10.0], [11.0]], 2, seed=0)
assert abs(sse - 1.0) < 1e-12 and labels[0] == labels[1] != labels[2]
"#,
    );
}

#[test]
fn losses_match_scalar_formulas() {
    run_python(
        r#"
import math
d = [[0.2, 1.0, 1.5], [1.2, 0.1, 0.7]]
lab = [0, 2]
ref = 0.0
for row, y in zip(d, lab):
    z = sum(math.exp(-x) for x in row)
    ref += -math.log(math.exp(-row[y]) / z)
assert abs(semkd.classification_loss(d, lab) - ref / 2) < 1e-12

old = [[0.3, 0.9], [1.1, 0.2]]
assert semkd.distillation_loss(d, old, 2.0) >= 0.0

fused = [[1.0, 0.0], [0.0, 1.0]]
mods = [[[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.0], [0.0, 1.0]]]
l = semkd.attention_loss(fused, mods, [0, 1])
p = math.exp(0.0) / (math.exp(0.0) + math.exp(-1.0))
assert abs(l + math.log(p)) < 1e-12
assert abs(semkd.cosine_distance([1.0, 0.0], [0.0, 2.0]) - 1.0) < 1e-12
"#,
    );
}

#[test]
fn metrics_and_dfsl() {
    run_python(
        r#"
assert semkd.accuracy(["a", "b", "b"], ["a", "b", "c"]) == 2 / 3
assert abs(semkd.harmonic_mean(0.5, 1.0) - 2 / 3) < 1e-12
perfect = semkd.dfsl_episode_outcome([[0.0, 1.0], [1.0, 0.0]], [0, 1], [0], [1])
assert perfect["joint"] == 1.0
r = semkd.evaluate_dfsl([perfect, perfect])
assert r["episodes"] == 2 and r["delta"] == 0.0
"#,
    );
}

#[test]
fn gradients_check_out() {
    run_python("assert semkd.check_gradients(1) < 1e-4");
}

#[test]
fn experiment_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/tiny.toml");
    run_python(&format!(
        r#"
import pathlib, subprocess
text = pathlib.Path({fixture:?}).read_text()
report = semkd.run_experiment(text, ["dataset.num_sessions=2"])
assert report["name"] == "tiny"
assert [s["num_classes"] for s in report["sessions"]] == [8, 10]
try:
    semkd.run_experiment(text, ["model.num_superclasses=50"])
    raise AssertionError("expected failure")
except semkd.SemkdError:
    pass
"#
    ));

    let cfg = semkd::harness::ExperimentConfig::load(
        std::path::Path::new(fixture),
        &[
            format!("output_dir={}", tmp.path().display()),
            "dataset.num_sessions=2".into(),
        ],
    )
    .unwrap();
    let (dir, _) = semkd::harness::run_to_dir(&cfg).unwrap();
    let ckpt = dir.join("checkpoints/session_02.semkd");
    run_python(&format!(
        r#"
m = semkd.Model.load({:?})
assert m.session_index == 2 and len(m.classes()) == 10
preds = m.predict([[0.1] * 8, [-0.3] * 8])
assert len(preds) == 2 and all(p in m.classes() for p in preds)
assert len(m.distances([[0.2] * 8])[0]) == 10
"#,
        ckpt.display().to_string()
    ));
}
