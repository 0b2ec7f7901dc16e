use nalgebra::Vector3;
use volcap_core::codec::{read_ply_pointcloud, write_ply_pointcloud};

const CUBE: &[u8] = include_bytes!("fixtures/turk_cube.ply");

#[test]
fn reads_the_colored_cube_sample() {
    let cloud = read_ply_pointcloud(CUBE).unwrap();
    let expect = [
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 1.0, 1.0],
        [0.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 0.0, 1.0],
        [1.0, 1.0, 1.0],
        [1.0, 1.0, 0.0],
    ];
    assert_eq!(cloud.len(), 8);
    for (i, p) in expect.iter().enumerate() {
        assert_eq!(cloud.positions[i], Vector3::from(*p));
        let color = if i < 4 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] };
        assert_eq!(cloud.colors[i], color);
    }
    assert!(cloud.normals.is_none());

    let again = read_ply_pointcloud(&write_ply_pointcloud(&cloud)).unwrap();
    assert_eq!(again.positions, cloud.positions);
    assert_eq!(again.colors, cloud.colors);
}

#[test]
fn truncated_sample_is_rejected() {
    let text = std::str::from_utf8(CUBE).unwrap();
    let cut = text.find("4 3 7 4 0").unwrap();
    assert!(read_ply_pointcloud(&CUBE[..cut]).is_err());
}
