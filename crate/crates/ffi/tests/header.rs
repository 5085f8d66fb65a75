use std::path::Path;
use std::process::Command;

/// The generated header must parse as C and as C++ when a compiler exists.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = include.join("esgnn.h");
    assert!(
        header.exists(),
        "build script did not write {}",
        header.display()
    );
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "esgnn_train",
        "esgnn_dataset_free",
        "esgnn_last_error",
        "ESGNN_STATUS_OK",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let src = "#include \"esgnn.h\"\nint main(void) { EsgnnDataset *d = 0; esgnn_dataset_free(d); return ESGNN_STATUS_OK; }\n";
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&include)
            .arg("-")
            .stdin(std::process::Stdio::piped())
            .spawn()
            .and_then(|mut child| {
                use std::io::Write;
                child.stdin.take().unwrap().write_all(src.as_bytes())?;
                child.wait()
            });
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(_) => eprintln!("{compiler} unavailable, skipping"),
        }
    }
}
