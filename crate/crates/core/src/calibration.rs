//! Three-anchor calibration frames and the human/robot shared map.
//!
//! Each side (human hand space, robot workspace) is calibrated by three
//! anchor points: `a0` is the origin, `a1` marks the +x direction and `a2`
//! the +y direction. The x/y axis vectors keep their physical length; only
//! the derived z axis is unit length.

use alloc::collections::VecDeque;
use core::time::Duration;

use crate::geometry::{orthonormalize, Mat3, Rot3, Vec3};
use crate::time::Timestamp;
use crate::{Error, Result};

/// Minimum `|(a1 − a0) × (a2 − a0)|` for anchors to count as non-collinear.
pub const COLLINEAR_TOL: f64 = 1e-6;
/// Relative perpendicularity tolerance of a built frame.
pub const PERP_TOL: f64 = 1e-6;
/// Largest allowed deviation of `a2 − a0` from perpendicular to `a1 − a0`.
pub const ORTHO_REJECT_DEG: f64 = 5.0;
/// Largest allowed difference between human and robot axis lengths, meters.
pub const SCALE_TOL: f64 = 1e-3;

pub const DEFAULT_DWELL_RADIUS: f64 = 0.005;
pub const DEFAULT_DWELL_TIME: Duration = Duration::from_secs(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnchorLabel {
    A0,
    A1,
    A2,
}

impl AnchorLabel {
    pub const ALL: [AnchorLabel; 3] = [AnchorLabel::A0, AnchorLabel::A1, AnchorLabel::A2];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AnchorLabel::A0 => "a0",
            AnchorLabel::A1 => "a1",
            AnchorLabel::A2 => "a2",
        }
    }
}

/// Three measured anchor points on one side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorSet {
    /// Origin (the bottom-right anchor).
    pub a0: Vec3,
    /// Point along +x.
    pub a1: Vec3,
    /// Point along +y.
    pub a2: Vec3,
}

impl AnchorSet {
    pub const fn new(a0: Vec3, a1: Vec3, a2: Vec3) -> Self {
        Self { a0, a1, a2 }
    }

    pub fn get(&self, label: AnchorLabel) -> Vec3 {
        match label {
            AnchorLabel::A0 => self.a0,
            AnchorLabel::A1 => self.a1,
            AnchorLabel::A2 => self.a2,
        }
    }

    pub fn translated(&self, t: Vec3) -> AnchorSet {
        AnchorSet::new(self.a0 + t, self.a1 + t, self.a2 + t)
    }
}

/// Origin and axes derived from one [`AnchorSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFrame {
    o: Vec3,
    ex: Vec3,
    ey: Vec3,
    ez: Vec3,
}

impl CalibrationFrame {
    pub fn origin(&self) -> Vec3 {
        self.o
    }

    /// x axis, carrying the physical anchor distance.
    pub fn ex(&self) -> Vec3 {
        self.ex
    }

    /// y axis after orthogonalization against x; not unit length.
    pub fn ey(&self) -> Vec3 {
        self.ey
    }

    /// Unit normal `ex × ey / |ex × ey|`.
    pub fn ez(&self) -> Vec3 {
        self.ez
    }

    pub fn axes(&self) -> [Vec3; 3] {
        [self.ex, self.ey, self.ez]
    }

    /// Orthonormal basis with columns `[ex/|ex|, ey/|ey|, ez]`.
    pub fn basis(&self) -> Rot3 {
        let m = Mat3::from_cols(self.ex / self.ex.norm(), self.ey / self.ey.norm(), self.ez);
        orthonormalize(&m).expect("calibration frame axes are orthogonal by construction")
    }

    /// Frame with origin `o` and axes along `ex`, `ey` (anchors at `o + ex`, `o + ey`).
    pub fn from_axes(o: Vec3, ex: Vec3, ey: Vec3) -> Result<Self> {
        build_frame(&AnchorSet::new(o, o + ex, o + ey))
    }
}

/// Builds a calibration frame: `o = a0`, `ex = a1 − a0`, `ey` is `a2 − a0`
/// with its projection on `ex` removed, `ez` is the unit normal.
pub fn build_frame(anchors: &AnchorSet) -> Result<CalibrationFrame> {
    let AnchorSet { a0, a1, a2 } = *anchors;
    if !(a0.is_finite() && a1.is_finite() && a2.is_finite()) {
        return Err(Error::NonFinite("anchor"));
    }
    let ex = a1 - a0;
    let ey_raw = a2 - a0;
    let normal = ex.cross(ey_raw);
    if normal.norm() <= COLLINEAR_TOL {
        return Err(Error::CollinearAnchors);
    }

    let ey = ey_raw - ex * (ey_raw.dot(ex) / ex.norm_squared());
    // Angle between the raw and orthogonalized y directions.
    let deviation = libm::atan2(ey_raw.cross(ey).norm(), ey_raw.dot(ey));
    let deviation_deg = deviation.to_degrees();
    if deviation_deg > ORTHO_REJECT_DEG {
        return Err(Error::AnchorsNotPerpendicular { deviation_deg });
    }

    let n = ex.cross(ey);
    let ez = n / n.norm();
    let frame = CalibrationFrame { o: a0, ex, ey, ez };
    debug_assert!(frame.ex.dot(frame.ey).abs() <= PERP_TOL * ex.norm() * ey.norm());
    Ok(frame)
}

/// Human and robot frames plus the z amplitude scale and, once rotation
/// references are latched, the basis change `P`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedMap {
    pub human: CalibrationFrame,
    pub robot: CalibrationFrame,
    eta: f64,
    p_basis: Option<Rot3>,
}

impl SharedMap {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn p_basis(&self) -> Option<Rot3> {
        self.p_basis
    }

    pub fn set_p_basis(&mut self, p: Rot3) {
        self.p_basis = Some(p);
    }

    /// Same frames with a different η. The basis change is kept.
    pub fn with_eta(&self, eta: f64) -> Result<SharedMap> {
        check_eta(eta)?;
        Ok(SharedMap { eta, ..*self })
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidEta(eta))
    }
}

/// Pairs a human and a robot frame. Only the axis lengths are constrained to
/// agree; orientations and origins are free.
pub fn pair_frames(human: CalibrationFrame, robot: CalibrationFrame, eta: f64) -> Result<SharedMap> {
    check_eta(eta)?;
    let dx = (human.ex.norm() - robot.ex.norm()).abs();
    if dx > SCALE_TOL {
        return Err(Error::ScaleMismatch {
            axis: "x",
            difference: dx,
        });
    }
    let dy = (human.ey.norm() - robot.ey.norm()).abs();
    if dy > SCALE_TOL {
        return Err(Error::ScaleMismatch {
            axis: "y",
            difference: dy,
        });
    }
    Ok(SharedMap {
        human,
        robot,
        eta,
        p_basis: None,
    })
}

/// Declares an anchor when the tracked point stays put for a while.
///
/// A point is emitted once every sample over the trailing `dwell_time` lies
/// within `radius` of the window centroid. The window is cleared after each
/// emission so the same hold cannot fire twice.
#[derive(Debug, Clone, PartialEq)]
pub struct DwellDetector {
    radius: f64,
    dwell_time: Duration,
    window: VecDeque<(Timestamp, Vec3)>,
    last: Option<Timestamp>,
}

impl Default for DwellDetector {
    fn default() -> Self {
        Self::new(DEFAULT_DWELL_RADIUS, DEFAULT_DWELL_TIME).expect("defaults are valid")
    }
}

impl DwellDetector {
    pub fn new(radius: f64, dwell_time: Duration) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) || dwell_time.is_zero() {
            return Err(Error::InvalidDwellConfig);
        }
        Ok(Self {
            radius,
            dwell_time,
            window: VecDeque::new(),
            last: None,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dwell_time(&self) -> Duration {
        self.dwell_time
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    pub fn feed(&mut self, t: Timestamp, p: Vec3) -> Result<Option<Vec3>> {
        if self.last.is_some_and(|last| t < last) {
            return Err(Error::NonMonotonicTimestamp);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("dwell sample"));
        }
        self.last = Some(t);
        self.window.push_back((t, p));

        // Keep the shortest suffix that still spans the dwell time.
        while self.window.len() > 1 && t.saturating_since(self.window[1].0) >= self.dwell_time {
            self.window.pop_front();
        }
        let span = t.saturating_since(self.window[0].0);
        if span < self.dwell_time {
            return Ok(None);
        }

        let n = self.window.len() as f64;
        let centroid = self.window.iter().fold(Vec3::ZERO, |acc, &(_, q)| acc + q) / n;
        let still = self.window.iter().all(|&(_, q)| q.distance(centroid) <= self.radius);
        if still {
            self.window.clear();
            Ok(Some(centroid))
        } else {
            Ok(None)
        }
    }
}

/// Collects `a0`, `a1`, `a2` in order; manual overrides may set any label.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnchorCapture {
    points: [Option<Vec3>; 3],
}

impl AnchorCapture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn captured(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }

    /// The first label still missing.
    pub fn next_label(&self) -> Option<AnchorLabel> {
        AnchorLabel::ALL.into_iter().find(|l| self.points[l.index()].is_none())
    }

    /// Stores `p` under the next missing label and returns that label.
    pub fn push(&mut self, p: Vec3) -> Option<AnchorLabel> {
        let label = self.next_label()?;
        self.points[label.index()] = Some(p);
        Some(label)
    }

    pub fn set(&mut self, label: AnchorLabel, p: Vec3) {
        self.points[label.index()] = Some(p);
    }

    pub fn get(&self, label: AnchorLabel) -> Option<Vec3> {
        self.points[label.index()]
    }

    pub fn anchor_set(&self) -> Option<AnchorSet> {
        match self.points {
            [Some(a0), Some(a1), Some(a2)] => Some(AnchorSet::new(a0, a1, a2)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn axis_aligned_anchors() {
        let f = build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.0, 0.3, 0.0))).unwrap();
        assert_eq!(f.origin(), Vec3::ZERO);
        assert_eq!(f.ex(), v(0.4, 0.0, 0.0));
        assert_eq!(f.ey(), v(0.0, 0.3, 0.0));
        assert_eq!(f.ez(), Vec3::Z);
    }

    #[test]
    fn slightly_skewed_y_anchor_is_orthogonalized() {
        let f = build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.01, 0.3, 0.0))).unwrap();
        // Gram-Schmidt by hand: proj = (0.01*0.4/0.16)·(0.4,0,0) = (0.01,0,0).
        assert!((f.ey() - v(0.0, 0.3, 0.0)).norm() < 1e-15);
        assert_eq!(f.ez(), Vec3::Z);
    }

    #[test]
    fn skew_beyond_five_degrees_is_rejected() {
        let err = build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.3, 0.1, 0.0))).unwrap_err();
        let Error::AnchorsNotPerpendicular { deviation_deg } = err else {
            panic!("unexpected error {err:?}");
        };
        // atan(0.3 / 0.1) in degrees.
        assert!((deviation_deg - 71.565_051_177_077_99).abs() < 1e-9);

        // 1.909 deg passes, just above 5 deg fails.
        let tan5 = libm::tan(5.0f64.to_radians());
        let just_over = v(0.3 * tan5 * 1.001, 0.3, 0.0);
        assert!(build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), just_over)).is_err());
        let just_under = v(0.3 * tan5 * 0.999, 0.3, 0.0);
        assert!(build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), just_under)).is_ok());
    }

    #[test]
    fn collinear_anchors_are_rejected() {
        let err = build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.8, 0.0, 0.0)));
        assert_eq!(err, Err(Error::CollinearAnchors));
        let err = build_frame(&AnchorSet::new(Vec3::ZERO, Vec3::ZERO, v(0.0, 0.3, 0.0)));
        assert_eq!(err, Err(Error::CollinearAnchors));
    }

    #[test]
    fn pairing_checks_lengths_only() {
        let h = build_frame(&AnchorSet::new(Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.0, 0.3, 0.0))).unwrap();
        assert!(pair_frames(h, h, 1.0).is_ok());

        // Same lengths, rotated 90 deg about z and moved.
        let r = CalibrationFrame::from_axes(v(1.0, 1.0, 0.0), v(0.0, 0.4, 0.0), v(-0.3, 0.0, 0.0)).unwrap();
        assert!(pair_frames(h, r, 1.0).is_ok());

        let short = CalibrationFrame::from_axes(Vec3::ZERO, v(0.3, 0.0, 0.0), v(0.0, 0.3, 0.0)).unwrap();
        assert!(matches!(
            pair_frames(h, short, 1.0),
            Err(Error::ScaleMismatch { axis: "x", .. })
        ));
        let short_y = CalibrationFrame::from_axes(Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.0, 0.2, 0.0)).unwrap();
        assert!(matches!(
            pair_frames(h, short_y, 1.0),
            Err(Error::ScaleMismatch { axis: "y", .. })
        ));
        assert_eq!(pair_frames(h, h, 0.0), Err(Error::InvalidEta(0.0)));
    }

    #[test]
    fn basis_is_orthonormal_columns() {
        let f = CalibrationFrame::from_axes(v(0.2, 0.0, 0.1), v(0.0, 0.4, 0.0), v(-0.3, 0.0, 0.0)).unwrap();
        let b = f.basis();
        assert!((b.matrix().col(0) - Vec3::Y).norm() < 1e-15);
        assert!((b.matrix().col(1) + Vec3::X).norm() < 1e-15);
        assert!((b.matrix().col(2) - Vec3::Z).norm() < 1e-15);
    }

    fn at(i: u64) -> Timestamp {
        // 30 Hz sample clock in nanoseconds.
        Timestamp(i * 1_000_000_000 / 30)
    }

    #[test]
    fn stationary_hand_emits_once() {
        let mut d = DwellDetector::default();
        let p = v(0.1, 0.2, 0.0);
        let emitted: alloc::vec::Vec<_> = (0..=36)
            .filter_map(|i| d.feed(at(i), p).unwrap().map(|c| (i, c)))
            .collect();
        assert_eq!(emitted.len(), 1);
        assert_eq!(emitted[0].0, 30);
        assert!((emitted[0].1 - p).norm() < 1e-15);
    }

    #[test]
    fn moving_hand_never_emits() {
        let mut d = DwellDetector::default();
        for i in 0..=60 {
            let x = 0.05 * at(i).as_secs_f64();
            assert_eq!(d.feed(at(i), v(x, 0.0, 0.0)).unwrap(), None);
        }
    }

    #[test]
    fn dwell_rejects_time_travel_and_bad_config() {
        let mut d = DwellDetector::default();
        d.feed(Timestamp(100), Vec3::ZERO).unwrap();
        assert_eq!(d.feed(Timestamp(99), Vec3::ZERO), Err(Error::NonMonotonicTimestamp));
        assert!(DwellDetector::new(0.0, DEFAULT_DWELL_TIME).is_err());
        assert!(DwellDetector::new(0.005, Duration::ZERO).is_err());
    }

    #[test]
    fn three_dwell_cycles_complete_an_anchor_set() {
        let corners = [Vec3::ZERO, v(0.4, 0.0, 0.0), v(0.0, 0.3, 0.0)];
        let mut d = DwellDetector::default();
        let mut capture = AnchorCapture::new();
        let mut i = 0;
        for corner in corners {
            loop {
                i += 1;
                if let Some(c) = d.feed(at(i), corner).unwrap() {
                    capture.push(c);
                    break;
                }
            }
        }
        let set = capture.anchor_set().unwrap();
        for (label, corner) in AnchorLabel::ALL.into_iter().zip(corners) {
            assert!(set.get(label).distance(corner) < 1e-15);
        }
        assert!(build_frame(&set).is_ok());
    }

    #[test]
    fn manual_override_fills_any_label() {
        let mut c = AnchorCapture::new();
        c.set(AnchorLabel::A1, Vec3::X);
        assert_eq!(c.next_label(), Some(AnchorLabel::A0));
        assert_eq!(c.push(Vec3::ZERO), Some(AnchorLabel::A0));
        assert_eq!(c.push(Vec3::Y), Some(AnchorLabel::A2));
        assert_eq!(c.push(Vec3::Z), None);
        assert_eq!(c.captured(), 3);
    }
}
