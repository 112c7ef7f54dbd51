//! Loads the module into an embedded interpreter and drives it from Python.

use flownav_py::flownav_py;
use pyo3::prelude::*;

#[test]
fn module_works_from_python() {
    pyo3::append_to_inittab!(flownav_py);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            cr#"
import flownav
s = flownav.Scene()
s.add_box((6.0, 0.0, 1.5), (0.5, 3.0, 3.0))
d = flownav.render_depth(s, (0.0, 0.0, 1.5), 0.0, width=65, height=49)
assert abs(d.at(24, 32) - 5.5) < 1e-6, d.at(24, 32)
f = flownav.analytic_flow(d, (0.0, 0.0, 1.0), (0.0, 0.0, 0.0))
assert f.at(24, 32) == (0.0, 0.0)
r = flownav.grad_check(steps=5)
assert r["max_rel_error"] < 1e-5
try:
    flownav.Scene.from_json("{")
except ValueError:
    pass
else:
    raise AssertionError("bad json accepted")
"#,
            None,
            None,
        )
        .map_err(|e| {
            e.print(py);
            e
        })
        .unwrap();
    });
}
