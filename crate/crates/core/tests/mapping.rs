mod common;

use scanmatch_core::sim::{
    output_paths, pgm_string, run_mapping, write_outputs, LidarConfig, MappingOptions, MappingRun,
    Scenario, DEFAULT_ODOMETRY_NOISE, TRAJECTORY_HEADER,
};
use scanmatch_core::Backend;

fn load(name: &str) -> Scenario {
    Scenario::load(&common::scenario_path(name)).unwrap()
}

fn gray_values(run: &MappingRun) -> Vec<u8> {
    pgm_string(&run.grid)
        .lines()
        .skip(3)
        .flat_map(|l| {
            l.split_whitespace()
                .map(|v| v.parse::<u8>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn zero_noise_maps_of_both_backends_nearly_coincide() {
    let room = load("room.txt");
    let [a, b] = Backend::ALL
        .map(|backend| gray_values(&run_mapping(&room, &MappingOptions::new(backend)).unwrap()));
    assert_eq!(a.len(), b.len());
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    assert!(
        (differing as f64) < 0.01 * a.len() as f64,
        "{differing} of {} cells differ",
        a.len()
    );
}

#[test]
fn noisy_room_still_covers_the_walls() {
    let mut room = load("room.txt");
    room.lidar.noise_sigma = LidarConfig::default().noise_sigma;
    room.odometry_noise = DEFAULT_ODOMETRY_NOISE;
    for backend in Backend::ALL {
        let run = run_mapping(&room, &MappingOptions::new(backend)).unwrap();
        let coverage = common::wall_coverage(&room.environment, &run.grid);
        assert!(coverage >= 0.95, "{backend}: coverage {coverage}");
        assert!(
            run.max_translation_error() < 0.01,
            "{backend}: {}",
            run.max_translation_error()
        );
    }
}

#[test]
fn lab_scenario_tracks_the_path() {
    let lab = load("lab.txt");
    let run = run_mapping(&lab, &MappingOptions::new(Backend::Residual)).unwrap();
    assert_eq!(run.trajectory.len(), lab.true_path().len());
    assert_eq!(run.reports().count(), run.trajectory.len() - 1);
    assert!(
        run.max_translation_error() < 0.05,
        "{}",
        run.max_translation_error()
    );
    assert!(
        run.max_rotation_error() < 0.05,
        "{}",
        run.max_rotation_error()
    );
    assert!(common::wall_coverage(&lab.environment, &run.grid) > 0.8);
}

#[test]
fn outputs_are_written_next_to_the_prefix() {
    let mut room = load("room.txt");
    room.lidar.beams = 180;
    let run = run_mapping(&room, &MappingOptions::new(Backend::Graph)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("room").to_string_lossy().into_owned();
    let (map, traj) = write_outputs(&run, &prefix).unwrap();
    assert_eq!((map.clone(), traj.clone()), output_paths(&prefix));

    let pgm = std::fs::read_to_string(map).unwrap();
    let header = format!("P2\n{} {}\n255\n", run.grid.width(), run.grid.height());
    assert!(pgm.starts_with(&header));

    let csv = std::fs::read_to_string(traj).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    assert_eq!(lines.count(), run.trajectory.len());

    let missing = dir
        .path()
        .join("no/such/dir/x")
        .to_string_lossy()
        .into_owned();
    assert!(write_outputs(&run, &missing).is_err());
}
