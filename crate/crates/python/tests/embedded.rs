use std::ffi::CString;

use hypermml_py::hypermml_module;
use pyo3::prelude::*;
use pyo3::types::PyDict;

/// Runs the repository's Python smoke script against the module linked into
/// this test binary, so no wheel has to be installed.
#[test]
fn smoke_script_passes_in_embedded_interpreter() {
    pyo3::append_to_inittab!(hypermml_module);
    Python::initialize();
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../python/smoke_test.py");
    let code = CString::new(std::fs::read_to_string(path).unwrap()).unwrap();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        globals.set_item("__name__", "smoke_test").unwrap();
        let run = py.run(&code, Some(&globals), None).and_then(|_| globals.get_item("main")?.unwrap().call0());
        if let Err(e) = run {
            e.print(py);
            panic!("smoke script failed");
        }
    });
}
