use std::path::Path;
use std::process::Command;

/// The generated header compiles as C and as C++.
#[test]
fn header_compiles() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include <fbcsf.h>\n\
         int main(void) {\n\
           FbcsfConfig *cfg = NULL;\n\
           FbcsfSample s; FbcsfExtinction e; (void)s; (void)e;\n\
           int32_t (*parse)(const char *, FbcsfConfig **) = fbcsf_config_parse;\n\
           (void)parse; (void)cfg;\n\
           return FBCSF_OK;\n\
         }\n",
    )
    .unwrap();
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg("-I")
            .arg(&include)
            .arg(&src)
            .status()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(status.success(), "{compiler} rejected the header");
    }
}

/// Newest `libfbcsf_ffi*.a` next to this test binary.
fn static_library() -> std::path::PathBuf {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    std::fs::read_dir(&deps)
        .unwrap()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy();
            name.starts_with("libfbcsf_ffi") && name.ends_with(".a")
        })
        .max_by_key(|p| std::fs::metadata(p).and_then(|m| m.modified()).ok())
        .expect("static library built alongside the tests")
}

/// A C program linked against the static library runs the linearized spectrum
/// and reports a configuration error with its code.
#[test]
fn c_program_links_and_runs() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include <fbcsf.h>
int main(void) {
  double k = 0.0;
  if (fbcsf_linear_mode_exponent(3, 128, 0.5, 500, &k) != FBCSF_OK) return 1;
  if (k < 6.86 || k > 7.14) return 2;
  FbcsfConfig *cfg = NULL;
  int32_t status = fbcsf_config_parse("solver.n = 64\n", &cfg);
  if (status != 70 || cfg != NULL) return 3;
  if (strstr(fbcsf_last_error(), "domain") == NULL) return 4;
  printf("%s %.4f\n", fbcsf_version(), k);
  return 0;
}
"#,
    )
    .unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(static_library())
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("cc");
    assert!(status.success(), "link failed");
    let out = Command::new(&exe).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with(env!("CARGO_PKG_VERSION")));
}
