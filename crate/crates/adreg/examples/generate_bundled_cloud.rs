//! Regenerates the point cloud shipped at `data/sphere_section.ply`.
//!
//! The file is committed so tests and demos run without a generation step;
//! rerun this after changing `sphere_section_cloud` and commit the result.

use adreg::benchmark::sphere_section_cloud;
use adreg::pointcloud::WriteFormat;

fn main() {
    let cloud = sphere_section_cloud(2000, 7);
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sphere_section.ply");
    cloud
        .write(&path, WriteFormat::PlyAscii)
        .expect("write bundled cloud");
    println!("wrote {} points to {}", cloud.len(), path.display());
}
