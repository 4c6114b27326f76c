//! Radio model: line of sight, log-distance path loss, received signal
//! strength, thermal noise floor, GPS-denied position noise and the
//! RSS-based position error bound.

use std::f64::consts::{LN_10, PI};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellKind, Coord, GridMap};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reference distance of the free-space term, in meters.
pub const REFERENCE_DISTANCE: f64 = 1.0;
/// Distance used when an agent shares a cell with the target.
pub const SAME_CELL_DISTANCE: f64 = 0.5;
/// Thermal noise density at 290 K, dBm/Hz.
pub const THERMAL_NOISE_DBM_HZ: f64 = -174.0;

#[derive(Debug, Error, PartialEq)]
pub enum RfError {
    #[error("position error bound needs at least one agent")]
    NoAgents,
    #[error("rss noise sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    /// dBm
    pub tx_power: f64,
    /// dBi
    pub tx_gain: f64,
    /// dBi
    pub rx_gain: f64,
    /// Hz
    pub bandwidth: f64,
    /// Hz
    pub carrier_frequency: f64,
    /// dB
    pub noise_figure: f64,
    pub beta_los: f64,
    pub beta_nlos: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power: -10.0,
            tx_gain: 2.0,
            rx_gain: 2.0,
            bandwidth: 1e6,
            carrier_frequency: 2.4e9,
            noise_figure: 10.0,
            beta_los: 2.0,
            beta_nlos: 3.5,
        }
    }
}

impl LinkBudget {
    pub fn beta(&self, los: bool) -> f64 {
        if los {
            self.beta_los
        } else {
            self.beta_nlos
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelSample {
    pub rss: f64,
    pub los: bool,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationMode {
    Peb,
    Proximity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminationConfig {
    pub mode: TerminationMode,
    /// meters
    pub peb_threshold: f64,
    /// dB, RSS measurement noise behind the bound
    pub rss_noise_sigma: f64,
    pub min_agents: usize,
    pub range_cells: u32,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        Self {
            mode: TerminationMode::Peb,
            peb_threshold: 1.0,
            rss_noise_sigma: 6.0,
            min_agents: 3,
            range_cells: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpsNoiseModel {
    /// m^2, per coordinate
    pub variance_per_axis: f64,
}

impl Default for GpsNoiseModel {
    fn default() -> Self {
        Self {
            variance_per_axis: 100.0,
        }
    }
}

/// Cells touched by the segment between the centers of `a` and `b`,
/// endpoints included. When the segment passes exactly through a cell
/// corner, both side cells are reported as well.
pub fn supercover(a: Coord, b: Coord) -> Vec<Coord> {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let nx = dx.abs() as i64;
    let ny = dy.abs() as i64;
    let sx = dx.signum();
    let sy = dy.signum();
    let mut cells = Vec::with_capacity((nx + ny + 1) as usize);
    let mut p = a;
    cells.push(p);
    let (mut ix, mut iy) = (0i64, 0i64);
    while ix < nx || iy < ny {
        // Compare the parameter at which the segment crosses the next
        // vertical edge against the next horizontal edge.
        let cross_x = (1 + 2 * ix) * ny;
        let cross_y = (1 + 2 * iy) * nx;
        match cross_x.cmp(&cross_y) {
            std::cmp::Ordering::Equal => {
                cells.push(p.offset(sx, 0));
                cells.push(p.offset(0, sy));
                p = p.offset(sx, sy);
                ix += 1;
                iy += 1;
            }
            std::cmp::Ordering::Less => {
                p = p.offset(sx, 0);
                ix += 1;
            }
            std::cmp::Ordering::Greater => {
                p = p.offset(0, sy);
                iy += 1;
            }
        }
        cells.push(p);
    }
    cells
}

/// True when no obstacle lies strictly between `a` and `b` along the
/// supercover line. Gates and GPS-denied cells do not block.
pub fn line_of_sight(map: &GridMap, a: Coord, b: Coord) -> bool {
    if a == b {
        return true;
    }
    supercover(a, b)
        .into_iter()
        .filter(|&c| c != a && c != b)
        .all(|c| map.kind(c) != CellKind::Obstacle)
}

/// Center-to-center distance in meters (1 m cells), clamped for a shared
/// cell.
pub fn cell_distance(a: Coord, b: Coord) -> f64 {
    if a == b {
        SAME_CELL_DISTANCE
    } else {
        (((a.x - b.x) as f64).powi(2) + ((a.y - b.y) as f64).powi(2)).sqrt()
    }
}

/// Free-space loss at the reference distance plus `10 * beta * log10(d)`.
pub fn path_loss_db(link: &LinkBudget, d: f64, los: bool) -> f64 {
    let d = d.max(SAME_CELL_DISTANCE);
    let fspl_ref =
        20.0 * (4.0 * PI * REFERENCE_DISTANCE * link.carrier_frequency / SPEED_OF_LIGHT).log10();
    fspl_ref + 10.0 * link.beta(los) * (d / REFERENCE_DISTANCE).log10()
}

pub fn rss_dbm(link: &LinkBudget, d: f64, los: bool) -> f64 {
    link.tx_power + link.tx_gain + link.rx_gain - path_loss_db(link, d, los)
}

pub fn noise_floor_dbm(link: &LinkBudget) -> f64 {
    THERMAL_NOISE_DBM_HZ + 10.0 * link.bandwidth.log10() + link.noise_figure
}

pub fn channel_sample(
    map: &GridMap,
    link: &LinkBudget,
    agent: Coord,
    target: Coord,
) -> ChannelSample {
    let los = line_of_sight(map, agent, target);
    let distance = cell_distance(agent, target);
    ChannelSample {
        rss: rss_dbm(link, distance, los),
        los,
        distance,
    }
}

/// Position estimate reported by an agent. Inside GPS-denied cells each
/// coordinate gets independent zero-mean Gaussian noise.
pub fn gps_estimate<R: Rng + ?Sized>(
    true_pos: (f64, f64),
    in_denied: bool,
    model: &GpsNoiseModel,
    rng: &mut R,
) -> (f64, f64) {
    if !in_denied || model.variance_per_axis == 0.0 {
        return true_pos;
    }
    let noise = Normal::new(0.0, model.variance_per_axis.sqrt())
        .expect("variance is validated non-negative");
    (
        true_pos.0 + noise.sample(rng),
        true_pos.1 + noise.sample(rng),
    )
}

/// One agent's contribution to the localization geometry: offset from the
/// target to the agent (meters) and the path-loss exponent of that link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorGeometry {
    pub dx: f64,
    pub dy: f64,
    pub beta: f64,
}

/// Square root of the trace of the inverse Fisher information for RSS
/// ranging with log-normal noise of `sigma_db`. Anchors at zero distance
/// carry no bearing and are skipped. Returns `+inf` when the information
/// matrix is singular.
pub fn peb_from_geometry(anchors: &[AnchorGeometry], sigma_db: f64) -> Result<f64, RfError> {
    if anchors.is_empty() {
        return Err(RfError::NoAgents);
    }
    if !(sigma_db > 0.0) {
        return Err(RfError::NonPositiveSigma(sigma_db));
    }
    let (mut j11, mut j12, mut j22) = (0.0, 0.0, 0.0);
    for a in anchors {
        let d2 = a.dx * a.dx + a.dy * a.dy;
        if d2 == 0.0 {
            continue;
        }
        let k = 10.0 * a.beta / (sigma_db * LN_10);
        let w = k * k / (d2 * d2);
        j11 += w * a.dx * a.dx;
        j12 += w * a.dx * a.dy;
        j22 += w * a.dy * a.dy;
    }
    let tr = j11 + j22;
    let det = j11 * j22 - j12 * j12;
    if tr == 0.0 || det <= 1e-12 * tr * tr {
        return Ok(f64::INFINITY);
    }
    Ok((tr / det).sqrt())
}

/// Position error bound for the target given the agents' cells. The path
/// loss exponent of each link follows its line of sight to the target.
pub fn peb(
    map: &GridMap,
    agent_cells: &[Coord],
    target: Coord,
    link: &LinkBudget,
    sigma_db: f64,
) -> Result<f64, RfError> {
    let anchors: Vec<AnchorGeometry> = agent_cells
        .iter()
        .map(|&c| AnchorGeometry {
            dx: (c.x - target.x) as f64,
            dy: (c.y - target.y) as f64,
            beta: link.beta(line_of_sight(map, c, target)),
        })
        .collect();
    peb_from_geometry(&anchors, sigma_db)
}

/// Per-cell RSS and line of sight toward the map's target, computed once.
#[derive(Debug, Clone)]
pub struct RadioField {
    rss: Vec<f64>,
    los: Vec<bool>,
    beta: Vec<f64>,
    target: Coord,
    width: usize,
}

impl RadioField {
    pub fn new(map: &GridMap, link: &LinkBudget) -> Self {
        let target = map.target();
        let n = map.num_cells();
        let mut rss = Vec::with_capacity(n);
        let mut los = Vec::with_capacity(n);
        let mut beta = Vec::with_capacity(n);
        for i in 0..n {
            let c = map.coord(i);
            let l = map.has_los_to_target(c);
            rss.push(rss_dbm(link, cell_distance(c, target), l));
            los.push(l);
            beta.push(link.beta(l));
        }
        Self {
            rss,
            los,
            beta,
            target,
            width: map.width(),
        }
    }

    fn idx(&self, c: Coord) -> usize {
        c.y as usize * self.width + c.x as usize
    }

    pub fn rss(&self, c: Coord) -> f64 {
        self.rss[self.idx(c)]
    }

    pub fn los(&self, c: Coord) -> bool {
        self.los[self.idx(c)]
    }

    pub fn peb(&self, agent_cells: &[Coord], sigma_db: f64) -> Result<f64, RfError> {
        let mut anchors = [AnchorGeometry {
            dx: 0.0,
            dy: 0.0,
            beta: 0.0,
        }; 9];
        let n = agent_cells.len().min(anchors.len());
        for (slot, &c) in anchors.iter_mut().zip(agent_cells) {
            *slot = AnchorGeometry {
                dx: (c.x - self.target.x) as f64,
                dy: (c.y - self.target.y) as f64,
                beta: self.beta[self.idx(c)],
            };
        }
        peb_from_geometry(&anchors[..n], sigma_db)
    }
}
