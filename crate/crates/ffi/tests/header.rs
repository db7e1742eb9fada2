use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include "spinmix.h"
int main(void) {
    SpinmixSystem *sys = NULL;
    if (spinmix_system_new("path:3", "ising:0.5", &sys) != SPINMIX_STATUS_OK) return 1;
    size_t n = spinmix_system_vertices(sys);
    spinmix_system_free(sys);
    return n == 3 ? 0 : 1;
}
"#;

fn syntax_check(compiler: &str, lang: &str) {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile_dir();
    let src = dir.join(format!("main.{lang}"));
    std::fs::write(&src, PROGRAM).unwrap();
    let out = match Command::new(compiler)
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(&include)
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("{compiler} not found, header check skipped");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("spinmix-header-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn header_is_valid_c() {
    syntax_check("cc", "c");
}

#[test]
fn header_is_valid_cpp() {
    syntax_check("c++", "cpp");
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/spinmix.h")).unwrap();
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}
