use std::path::Path;
use std::process::Command;

const FUNCTIONS: &[&str] = &[
    "pl_version",
    "pl_last_error",
    "pl_dataset_open",
    "pl_dataset_free",
    "pl_dataset_query_count",
    "pl_dataset_query_name",
    "pl_dataset_golden",
    "pl_dataset_query",
    "pl_query_from_keyfile",
    "pl_query_free",
    "pl_options_default",
    "pl_localize",
    "pl_estimate_free",
    "pl_estimate_pose",
    "pl_estimate_fitted_count",
    "pl_estimate_quality",
    "pl_estimate_iterations",
    "pl_estimate_used_backmatching",
    "pl_export",
    "pl_accept_probability",
];

fn header() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pointloc.h")
}

#[test]
fn header_declares_every_function() {
    let h = std::fs::read_to_string(header()).unwrap();
    for f in FUNCTIONS {
        assert!(h.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(h.contains("typedef struct PlDataset PlDataset;"));
    assert!(h.contains("PL_STATUS_OK = 0"));
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let Ok(cc) = which("cc") else {
        eprintln!("no C compiler, skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"pointloc.h\"\n\
         int main(void) {\n\
           PlOptions o = pl_options_default();\n\
           PlDataset *ds = NULL;\n\
           PlStatus s = pl_dataset_open(\"x\", &ds);\n\
           (void)o; (void)s;\n\
           return pl_accept_probability(1, 1, 1, 5.0) > 0.0 ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let include = header().parent().unwrap().to_path_buf();
    for lang in ["c", "c++"] {
        let status = Command::new(&cc)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .status()
            .unwrap();
        assert!(status.success(), "header does not compile as {lang}");
    }
}

fn which(bin: &str) -> Result<std::path::PathBuf, ()> {
    std::env::var_os("PATH")
        .and_then(|paths| {
            std::env::split_paths(&paths)
                .map(|p| p.join(bin))
                .find(|p| p.is_file())
        })
        .ok_or(())
}
