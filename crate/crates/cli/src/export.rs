//! OBJ and CSV exports of a reconstruction.

use std::fmt::Write;

use nalgebra::Vector3;

use mirrorpose_core::{ReconstructionResult, SkeletonTemplate};

/// Half the side length of the exported mirror quad, in meters.
const QUAD_HALF_SIZE: f64 = 1.0;

fn mirror_quad(result: &ReconstructionResult, template: &SkeletonTemplate) -> [Vector3<f64>; 4] {
    let plane = &result.fitted_plane;
    let root = template.root();
    let mid = 0.5 * (result.joints_real[root] + result.joints_mirrored[root]);
    let center = mid - plane.signed_distance(&mid) * plane.normal;
    let n = plane.normal;
    let mut u = n.cross(&Vector3::y());
    if u.norm() < 1e-6 {
        u = n.cross(&Vector3::x());
    }
    let u = u.normalize() * QUAD_HALF_SIZE;
    let v = n.cross(&u);
    [center - u - v, center + u - v, center + u + v, center - u + v]
}

/// Wavefront OBJ with one polyline object per subject (a segment per bone)
/// and a square patch of the fitted mirror plane.
pub fn to_obj(result: &ReconstructionResult, template: &SkeletonTemplate) -> String {
    let mut out = String::from("# mirrorpose reconstruction\n");
    let mut base = 0;
    for (name, joints) in [("real", &result.joints_real), ("mirrored", &result.joints_mirrored)] {
        writeln!(out, "o {name}").unwrap();
        for p in joints.iter() {
            writeln!(out, "v {} {} {}", p.x, p.y, p.z).unwrap();
        }
        for j in 0..template.num_joints() {
            if let Some(parent) = template.parent(j) {
                writeln!(out, "l {} {}", base + parent + 1, base + j + 1).unwrap();
            }
        }
        base += joints.len();
    }
    out.push_str("o mirror\n");
    for p in mirror_quad(result, template) {
        writeln!(out, "v {} {} {}", p.x, p.y, p.z).unwrap();
    }
    writeln!(out, "f {} {} {} {}", base + 1, base + 2, base + 3, base + 4).unwrap();
    out
}

/// Joint positions of both subjects, one row per joint.
pub fn joints_csv(result: &ReconstructionResult, template: &SkeletonTemplate) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["subject", "joint", "name", "x", "y", "z"]).unwrap();
    for (name, joints) in [("real", &result.joints_real), ("mirrored", &result.joints_mirrored)] {
        for (j, p) in joints.iter().enumerate() {
            w.write_record([
                name.to_string(),
                j.to_string(),
                template.joint_names()[j].clone(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
            ])
            .unwrap();
        }
    }
    w.into_inner().expect("writing to memory")
}
