//! Desk-scale mapping simulator.
//!
//! A robot follows a scripted polyline of waypoints through a world made of
//! line segments. At every step it takes a raycast scan, predicts its pose
//! from noisy odometry, matches the scan against the map built so far and
//! inserts the scan at the matched pose.
//!
//! Scenario files are line oriented; `#` starts a comment:
//!
//! ```text
//! SEGMENT x1 y1 x2 y2
//! WAYPOINT x y theta
//! LIDAR beams fov max_range noise_sigma
//! ODOMETRY_NOISE sigma_translation sigma_rotation
//! SCANS_PER_LEG n
//! SEED n
//! RESOLUTION r
//! ```

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::Point2;

use crate::costs::Weights;
use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, PointCloud2D, Pose2D};
use crate::grid::{OccupancyUpdate, ProbabilityGrid};
use crate::matcher::{match_scan, MatchRequest};
use crate::rng;
use crate::solver::{Backend, SolverOptions, SolverReport};

pub const TRAJECTORY_HEADER: &str =
    "step,true_x,true_y,true_theta,est_x,est_y,est_theta,iterations,time_us";

/// Free space around the environment's bounding box covered by the map.
pub const MAP_MARGIN: f64 = 1.0;

/// Odometry noise sigmas `[translation m, rotation rad]` used when a
/// scenario has no `ODOMETRY_NOISE` line.
pub const DEFAULT_ODOMETRY_NOISE: [f64; 2] = [0.02, 0.01];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: Point2<f64>,
    pub b: Point2<f64>,
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Segment {
            a: Point2::new(x1, y1),
            b: Point2::new(x2, y2),
        }
    }

    /// Distance along the ray `origin + t * dir` (unit `dir`) to this
    /// segment, endpoints included. Parallel rays never hit.
    pub fn ray_hit(&self, origin: &Point2<f64>, dir: [f64; 2]) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir[0] * e.y - dir[1] * e.x;
        if denom == 0.0 {
            return None;
        }
        let w = self.a - origin;
        let t = (w.x * e.y - w.y * e.x) / denom;
        let s = (w.x * dir[1] - w.y * dir[0]) / denom;
        (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Environment {
    pub segments: Vec<Segment>,
}

impl Environment {
    pub fn bounds(&self) -> Option<([f64; 2], [f64; 2])> {
        let mut it = self.segments.iter().flat_map(|s| [s.a, s.b]);
        let first = it.next()?;
        Some(
            it.fold(([first.x, first.y], [first.x, first.y]), |(lo, hi), p| {
                (
                    [lo[0].min(p.x), lo[1].min(p.y)],
                    [hi[0].max(p.x), hi[1].max(p.y)],
                )
            }),
        )
    }
}

/// Range to the nearest segment along each beam, capped at `max_range`.
/// Beam angles are relative to the pose heading.
pub fn raycast(env: &Environment, pose: &Pose2D, angles: &[f64], max_range: f64) -> Vec<f64> {
    let origin = Point2::new(pose.x, pose.y);
    angles
        .iter()
        .map(|a| {
            let (s, c) = (pose.theta + a).sin_cos();
            env.segments
                .iter()
                .filter_map(|seg| seg.ray_hit(&origin, [c, s]))
                .fold(max_range, f64::min)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarConfig {
    pub beams: usize,
    pub fov: f64,
    pub max_range: f64,
    pub noise_sigma: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            beams: 360,
            fov: TAU,
            max_range: 10.0,
            noise_sigma: 0.01,
        }
    }
}

impl LidarConfig {
    /// Beam directions centered on the heading; a full circle does not
    /// repeat its first beam.
    pub fn angles(&self) -> Vec<f64> {
        let full = self.fov >= TAU - 1e-12;
        let step = if full {
            self.fov / self.beams as f64
        } else {
            self.fov / (self.beams - 1) as f64
        };
        let start = if full {
            -std::f64::consts::PI
        } else {
            -self.fov / 2.0
        };
        (0..self.beams).map(|i| start + i as f64 * step).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub environment: Environment,
    pub waypoints: Vec<Pose2D>,
    pub scans_per_leg: usize,
    pub lidar: LidarConfig,
    /// Per-step odometry noise: sigma on each of `dx, dy` and on `dtheta`.
    pub odometry_noise: [f64; 2],
    pub seed: u64,
    pub resolution: f64,
}

fn parse_fields<const N: usize>(
    line_no: usize,
    directive: &str,
    args: &[&str],
) -> Result<[f64; N]> {
    if args.len() != N {
        return Err(Error::Parse {
            line: line_no,
            message: format!("{directive} expects {N} values, got {}", args.len()),
        });
    }
    let mut out = [0.0; N];
    for (slot, raw) in out.iter_mut().zip(args) {
        *slot = raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("{directive}: `{raw}` is not a finite number"),
            })?;
    }
    Ok(out)
}

fn parse_count(line_no: usize, directive: &str, args: &[&str]) -> Result<u64> {
    match args {
        [raw] => raw.parse::<u64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("{directive}: `{raw}` is not a non-negative integer"),
        }),
        _ => Err(Error::Parse {
            line: line_no,
            message: format!("{directive} expects 1 value, got {}", args.len()),
        }),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let mut segments = Vec::new();
        let mut waypoints = Vec::new();
        let mut lidar = LidarConfig::default();
        let mut odometry_noise = DEFAULT_ODOMETRY_NOISE;
        let mut scans_per_leg = 10;
        let mut seed = 0;
        let mut resolution = 0.05;

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let directive = tokens.next().unwrap_or_default();
            let args: Vec<&str> = tokens.collect();
            match directive {
                "SEGMENT" => {
                    let [x1, y1, x2, y2] = parse_fields(line_no, directive, &args)?;
                    segments.push(Segment::new(x1, y1, x2, y2));
                }
                "WAYPOINT" => {
                    let [x, y, t] = parse_fields(line_no, directive, &args)?;
                    waypoints.push(Pose2D::new(x, y, t));
                }
                "LIDAR" => {
                    let [beams, fov, max_range, noise] = parse_fields(line_no, directive, &args)?;
                    if beams < 2.0
                        || beams.fract() != 0.0
                        || fov <= 0.0
                        || max_range <= 0.0
                        || noise < 0.0
                    {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "LIDAR needs an integer beams >= 2, fov > 0, max_range > 0, noise >= 0".into(),
                        });
                    }
                    lidar = LidarConfig {
                        beams: beams as usize,
                        fov,
                        max_range,
                        noise_sigma: noise,
                    };
                }
                "ODOMETRY_NOISE" => {
                    let [st, sr] = parse_fields(line_no, directive, &args)?;
                    if st < 0.0 || sr < 0.0 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "ODOMETRY_NOISE sigmas must be >= 0".into(),
                        });
                    }
                    odometry_noise = [st, sr];
                }
                "SCANS_PER_LEG" => {
                    scans_per_leg = parse_count(line_no, directive, &args)? as usize;
                    if scans_per_leg == 0 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "SCANS_PER_LEG must be >= 1".into(),
                        });
                    }
                }
                "SEED" => seed = parse_count(line_no, directive, &args)?,
                "RESOLUTION" => {
                    let [r] = parse_fields(line_no, directive, &args)?;
                    if r <= 0.0 {
                        return Err(Error::Parse {
                            line: line_no,
                            message: "RESOLUTION must be > 0".into(),
                        });
                    }
                    resolution = r;
                }
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown directive `{other}`"),
                    })
                }
            }
        }

        let scenario = Scenario {
            environment: Environment { segments },
            waypoints,
            scans_per_leg,
            lidar,
            odometry_noise,
            seed,
            resolution,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.environment.segments.is_empty() {
            return Err(Error::argument("scenario needs at least one SEGMENT"));
        }
        if self.waypoints.len() < 2 {
            return Err(Error::argument("scenario needs at least two WAYPOINTs"));
        }
        if self.lidar.beams < 2 {
            return Err(Error::argument("lidar needs at least two beams"));
        }
        if self.scans_per_leg == 0 {
            return Err(Error::argument("scans_per_leg must be >= 1"));
        }
        Ok(())
    }

    /// True poses at every scan: the first waypoint, then `scans_per_leg`
    /// evenly spaced poses per leg ending on each following waypoint.
    pub fn true_path(&self) -> Vec<Pose2D> {
        let mut path = vec![self.waypoints[0]];
        for leg in self.waypoints.windows(2) {
            let (a, b) = (leg[0], leg[1]);
            let turn = normalize_angle(b.theta - a.theta);
            for k in 1..=self.scans_per_leg {
                let f = k as f64 / self.scans_per_leg as f64;
                path.push(Pose2D::new(
                    a.x + f * (b.x - a.x),
                    a.y + f * (b.y - a.y),
                    a.theta + f * turn,
                ));
            }
        }
        path
    }

    /// Map of unobserved cells (probability `fill`) spanning the environment
    /// plus [`MAP_MARGIN`].
    ///
    /// The extra half cell of margin puts the bounding walls on cell centers.
    pub fn empty_map(&self, fill: f64) -> Result<ProbabilityGrid> {
        let (lo, hi) = self
            .environment
            .bounds()
            .ok_or_else(|| Error::argument("scenario has no segments"))?;
        let margin = MAP_MARGIN + 0.5 * self.resolution;
        ProbabilityGrid::covering(lo, hi, margin, self.resolution, fill)
    }
}

/// A simulated scan split into returns and max-range beams.
#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    /// Beams that hit something, in the body frame.
    pub returns: PointCloud2D,
    /// All beams; misses are placed at `max_range`.
    pub all_beams: PointCloud2D,
}

pub fn simulate_scan(
    env: &Environment,
    pose: &Pose2D,
    lidar: &LidarConfig,
    rng: &mut rng::StreamRng,
) -> Result<Scan> {
    let angles = lidar.angles();
    let ranges = raycast(env, pose, &angles, lidar.max_range);
    let mut returns = Vec::new();
    let mut all = Vec::with_capacity(angles.len());
    for (a, r) in angles.iter().zip(ranges) {
        let (s, c) = a.sin_cos();
        if r < lidar.max_range {
            let noisy = (r + rng::gaussian(rng, lidar.noise_sigma))
                .clamp(0.0, lidar.max_range * (1.0 - 1e-12));
            let p = Point2::new(noisy * c, noisy * s);
            returns.push(p);
            all.push(p);
        } else {
            all.push(Point2::new(lidar.max_range * c, lidar.max_range * s));
        }
    }
    Ok(Scan {
        returns: PointCloud2D::new(returns)?,
        all_beams: PointCloud2D::new(all)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappingOptions {
    pub backend: Backend,
    pub weights: Weights,
    pub solver: SolverOptions,
    pub update: OccupancyUpdate,
    /// Probability of cells no scan has touched yet. Defaults to the lower
    /// clamp, so unexplored space never attracts scan points and walls are
    /// not pulled towards the unknown side.
    pub unknown_probability: f64,
    /// Once cumulative matching time exceeds this budget, later scans are
    /// inserted at their odometry prediction without matching.
    pub max_total_match: Option<Duration>,
}

impl MappingOptions {
    pub fn new(backend: Backend) -> Self {
        MappingOptions {
            backend,
            weights: Weights::default(),
            solver: SolverOptions::for_backend(backend),
            update: OccupancyUpdate::default(),
            unknown_probability: OccupancyUpdate::default().min_probability,
            max_total_match: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub truth: Pose2D,
    pub estimate: Pose2D,
    /// `None` for the bootstrap scan and for steps skipped by the budget.
    pub report: Option<SolverReport>,
}

impl StepRecord {
    pub fn iterations(&self) -> usize {
        self.report.map_or(0, |r| r.iterations)
    }

    pub fn time_us(&self) -> f64 {
        self.report.map_or(0.0, |r| r.wall_time_us())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MappingRun {
    pub grid: ProbabilityGrid,
    pub trajectory: Vec<StepRecord>,
}

impl MappingRun {
    pub fn reports(&self) -> impl Iterator<Item = &SolverReport> {
        self.trajectory.iter().filter_map(|s| s.report.as_ref())
    }

    /// Running total of match wall time in microseconds, one entry per step.
    pub fn cumulative_match_time_us(&self) -> Vec<f64> {
        self.trajectory
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.time_us();
                Some(*acc)
            })
            .collect()
    }

    pub fn max_translation_error(&self) -> f64 {
        self.trajectory
            .iter()
            .map(|s| s.estimate.translation_distance(&s.truth))
            .fold(0.0, f64::max)
    }

    pub fn max_rotation_error(&self) -> f64 {
        self.trajectory
            .iter()
            .map(|s| s.estimate.rotation_distance(&s.truth))
            .fold(0.0, f64::max)
    }

    pub fn trajectory_csv(&self) -> String {
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for s in &self.trajectory {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.3}",
                s.step,
                s.truth.x,
                s.truth.y,
                s.truth.theta,
                s.estimate.x,
                s.estimate.y,
                s.estimate.theta,
                s.iterations(),
                s.time_us()
            );
        }
        out
    }
}

/// Drives the robot along the scenario path, matching and inserting each scan.
pub fn run_mapping(scenario: &Scenario, options: &MappingOptions) -> Result<MappingRun> {
    scenario.validate()?;
    let mut grid = scenario.empty_map(options.unknown_probability)?;
    let mut r = rng::stream(scenario.seed, 0);
    let path = scenario.true_path();
    let mut trajectory: Vec<StepRecord> = Vec::with_capacity(path.len());
    let mut spent = Duration::ZERO;
    let [sigma_t, sigma_r] = scenario.odometry_noise;

    for (step, truth) in path.iter().enumerate() {
        let scan = simulate_scan(&scenario.environment, truth, &scenario.lidar, &mut r)?;
        let (estimate, report) = match trajectory.last() {
            // the first scan defines the map frame
            None => (*truth, None),
            Some(prev) => {
                let odom = path[step - 1].between(truth);
                let noisy = Pose2D::new(
                    odom.x + rng::gaussian(&mut r, sigma_t),
                    odom.y + rng::gaussian(&mut r, sigma_t),
                    odom.theta + rng::gaussian(&mut r, sigma_r),
                );
                let predicted = prev.estimate.compose(&noisy);
                let over_budget = options.max_total_match.is_some_and(|b| spent >= b);
                if scan.returns.is_empty() || over_budget {
                    (predicted, None)
                } else {
                    let req = MatchRequest {
                        weights: options.weights,
                        options: options.solver,
                        ..MatchRequest::new(
                            predicted.translation(),
                            predicted,
                            &scan.returns,
                            &grid,
                            options.backend,
                        )
                    };
                    let result = match_scan(&req)?;
                    spent += result.report.wall_time;
                    (result.pose_estimate, Some(result.report))
                }
            }
        };
        grid.insert_scan(
            &estimate,
            &scan.all_beams,
            scenario.lidar.max_range,
            &options.update,
        );
        trajectory.push(StepRecord {
            step,
            truth: *truth,
            estimate,
            report,
        });
    }
    Ok(MappingRun { grid, trajectory })
}

/// ASCII PGM: `gray = round(255 * (1 - p))`, north row first.
pub fn pgm_string(grid: &ProbabilityGrid) -> String {
    let (w, h) = (grid.width(), grid.height());
    let mut out = String::with_capacity(16 + w * h * 4);
    let _ = write!(out, "P2\n{w} {h}\n255\n");
    for iy in (0..h).rev() {
        for ix in 0..w {
            let gray = (255.0 * (1.0 - grid.get(ix, iy)) + 0.5)
                .floor()
                .clamp(0.0, 255.0) as u8;
            if ix > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{gray}");
        }
        out.push('\n');
    }
    out
}

pub fn write_pgm(grid: &ProbabilityGrid, path: &Path) -> Result<()> {
    fs::write(path, pgm_string(grid)).map_err(|e| Error::io(path, e))
}

/// Paths of the map and trajectory files for an output prefix.
pub fn output_paths(prefix: &str) -> (PathBuf, PathBuf) {
    (
        PathBuf::from(format!("{prefix}_map.pgm")),
        PathBuf::from(format!("{prefix}_trajectory.csv")),
    )
}

pub fn write_outputs(run: &MappingRun, prefix: &str) -> Result<(PathBuf, PathBuf)> {
    let (map, traj) = output_paths(prefix);
    write_pgm(&run.grid, &map)?;
    fs::write(&traj, run.trajectory_csv()).map_err(|e| Error::io(&traj, e))?;
    Ok((map, traj))
}
