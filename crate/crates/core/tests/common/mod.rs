use std::path::{Path, PathBuf};

/// `FHN_MNIST_DIR`, else `<workspace>/data/mnist` when it holds the files.
pub fn mnist_dir() -> Option<PathBuf> {
    if let Some(dir) = std::env::var_os("FHN_MNIST_DIR") {
        return Some(dir.into());
    }
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    fhn_hybrid::dataset::locate(&dir, fhn_hybrid::dataset::TRAIN_IMAGES)
        .is_ok()
        .then_some(dir)
}
