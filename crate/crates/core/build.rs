use std::env;
use std::path::PathBuf;
use std::process::Command;

// Embed the libtorch location as an rpath so test binaries run without
// LD_LIBRARY_PATH.
fn main() {
    println!("cargo:rerun-if-env-changed=LIBTORCH");
    let lib_dir = match env::var("LIBTORCH") {
        Ok(root) => Some(PathBuf::from(root).join("lib")),
        Err(_) => Command::new("python3")
            .args(["-c", "import os, torch; print(os.path.dirname(torch.__file__))"])
            .output()
            .ok()
            .filter(|o| o.status.success())
            .map(|o| PathBuf::from(String::from_utf8_lossy(&o.stdout).trim()).join("lib")),
    };
    if let Some(dir) = lib_dir {
        println!("cargo:rustc-link-arg=-Wl,-rpath,{}", dir.display());
    }
}
