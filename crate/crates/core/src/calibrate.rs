//! Homography estimation from point correspondences (normalized DLT) and
//! warping of frames and event streams between sensor planes.

use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::types::{Event, EventStream, Frame};

const MIN_DET: f64 = 1e-12;
/// Relative size of the second-smallest singular value below which the
/// linear system is considered rank deficient.
const RANK_TOL: f64 = 1e-10;

/// One correspondence `(x, y) ↦ (x', y')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointPair {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

impl PointPair {
    pub fn new(src: [f64; 2], dst: [f64; 2]) -> Self {
        Self { src, dst }
    }
}

/// Invertible projective map, scaled so `h₃₃ = 1` whenever it is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("homography", "non-finite entry"));
        }
        let m = if m[(2, 2)] != 0.0 { m / m[(2, 2)] } else { m };
        if m.determinant().abs() <= MIN_DET {
            return Err(Error::Degenerate(format!("homography determinant {:e} is not invertible", m.determinant())));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let inv = self.0.try_inverse().expect("invariant: homography is invertible");
        Self::new(inv).expect("inverse of an invertible homography is invertible")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::new(self.0 * other.0)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p.x / p.z, p.y / p.z)
    }

    /// Nine whitespace-separated values, row-major, on one line.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        let vals: Vec<String> =
            (0..3).flat_map(|r| (0..3).map(move |c| (r, c))).map(|(r, c)| format!("{}", self.0[(r, c)])).collect();
        writeln!(w, "{}", vals.join(" "))?;
        Ok(())
    }

    pub fn read_text(mut r: impl Read) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        let vals: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::format("homography", format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 9 {
            return Err(Error::format("homography", format!("expected 9 values, found {}", vals.len())));
        }
        Self::new(Matrix3::from_row_slice(&vals))
    }
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizer(points: impl Iterator<Item = [f64; 2]> + Clone) -> Result<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (sx / n, sy / n);
    let mean_dist = points.map(|p| (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / n;
    if !(mean_dist > 0.0 && mean_dist.is_finite()) {
        return Err(Error::Degenerate("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = (b[0] - a[0]).hypot(b[1] - a[1]) * (c[0] - a[0]).hypot(c[1] - a[1]);
    cross.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE)
}

/// Normalized DLT: Hartley-normalize both point sets, take the right singular
/// vector of the smallest singular value of the stacked `2N×9` system, undo the
/// normalization and scale to `h₃₃ = 1`. More than four pairs give a
/// least-squares fit.
pub fn estimate_homography(pairs: &[PointPair]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::invalid("correspondences", format!("need at least 4 pairs, got {}", pairs.len())));
    }
    if pairs.iter().any(|p| p.src.iter().chain(&p.dst).any(|v| !v.is_finite())) {
        return Err(Error::invalid("correspondences", "non-finite coordinate"));
    }
    if pairs.len() == 4 {
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(pairs[i].src, pairs[j].src, pairs[k].src) {
                return Err(Error::Degenerate(format!("source points {i}, {j}, {k} are collinear")));
            }
        }
    }
    let t_src = normalizer(pairs.iter().map(|p| p.src))?;
    let t_dst = normalizer(pairs.iter().map(|p| p.dst))?;

    // zero rows keep the matrix at least 9×9 so the SVD exposes a full V
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, p) in pairs.iter().enumerate() {
        let s = t_src * Vector3::new(p.src[0], p.src[1], 1.0);
        let d = t_dst * Vector3::new(p.dst[0], p.dst[1], 1.0);
        let (x, y) = (s.x / s.z, s.y / s.z);
        let (u, v) = (d.x / d.z, d.y / d.z);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Degenerate("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let largest = svd.singular_values[order[0]];
    let second_smallest = svd.singular_values[order[7]];
    if second_smallest <= RANK_TOL * largest {
        return Err(Error::Degenerate("correspondence system is rank deficient".into()));
    }
    let h = v_t.row(order[8]);
    let h_norm = Matrix3::from_row_slice(&h.iter().copied().collect::<Vec<_>>());
    let t_dst_inv =
        t_dst.try_inverse().ok_or_else(|| Error::Degenerate("target normalization not invertible".into()))?;
    Homography::new(t_dst_inv * h_norm * t_src)
}

/// Resamples `frame` into an `out_w×out_h` plane: each output pixel pulls
/// from `H⁻¹(x, y)` with bilinear interpolation; positions outside the
/// source frame are zero.
pub fn warp_frame(frame: &Frame, h: &Homography, out_w: usize, out_h: usize) -> Frame {
    let inv = h.inverse();
    let (max_x, max_y) = ((frame.width() - 1) as f64, (frame.height() - 1) as f64);
    let mut data = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let inside = sx >= -1e-9 && sy >= -1e-9 && sx <= max_x + 1e-9 && sy <= max_y + 1e-9;
            data.push(if inside { frame.sample_bilinear(sx.clamp(0.0, max_x), sy.clamp(0.0, max_y)) } else { 0.0 });
        }
    }
    Frame::from_clamped(out_w, out_h, data).expect("bilinear samples are finite")
}

/// Maps every event through `h`, rounding to the nearest pixel and dropping
/// events that land outside `out_w×out_h`. Times and polarities are unchanged.
pub fn warp_events(stream: &EventStream, h: &Homography, out_w: u32, out_h: u32) -> Result<EventStream> {
    let events: Vec<Event> = stream
        .events()
        .iter()
        .filter_map(|e| {
            let (x, y) = h.apply(e.x as f64, e.y as f64);
            let (rx, ry) = (x.round(), y.round());
            let in_bounds = rx >= 0.0 && ry >= 0.0 && rx < out_w as f64 && ry < out_h as f64;
            in_bounds.then(|| Event::new(e.t, rx as u16, ry as u16, e.p))
        })
        .collect();
    EventStream::from_unsorted(out_w, out_h, stream.t_start(), stream.t_end(), events)
}

/// Reads `x,y,x',y'` rows; a non-numeric first row is taken as a header.
pub fn read_correspondences(r: impl Read) -> Result<Vec<PointPair>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("correspondence CSV", e.to_string()))?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == 4 => out.push(PointPair::new([v[0], v[1]], [v[2], v[3]])),
            Err(_) if i == 0 => continue,
            _ => return Err(Error::format("correspondence CSV", format!("row {} is not four numbers", i + 1))),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Polarity;

    fn square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [10.0, 0.0], [10.0, 8.0], [0.0, 8.0]]
    }

    #[test]
    fn identity_from_four_pairs() {
        let pairs: Vec<_> = square().into_iter().map(|p| PointPair::new(p, p)).collect();
        let h = estimate_homography(&pairs).unwrap();
        let diff = h.matrix() - Matrix3::identity();
        assert!(diff.amax() < 1e-10, "{h:?}");
    }

    #[test]
    fn pure_translation() {
        let pairs: Vec<_> = square().into_iter().map(|p| PointPair::new(p, [p[0] + 5.0, p[1] - 3.0])).collect();
        let h = estimate_homography(&pairs).unwrap();
        let diff = h.matrix() - Homography::translation(5.0, -3.0).matrix();
        assert!(diff.amax() < 1e-10, "{h:?}");
    }

    #[test]
    fn too_few_and_collinear() {
        let pairs: Vec<_> = square().into_iter().take(3).map(|p| PointPair::new(p, p)).collect();
        assert!(estimate_homography(&pairs).is_err());
        let line: Vec<_> =
            [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 5.0]].into_iter().map(|p| PointPair::new(p, p)).collect();
        assert!(matches!(estimate_homography(&line), Err(Error::Degenerate(_))));
        let all_on_line: Vec<_> = (0..6).map(|i| [i as f64, 2.0 * i as f64]).map(|p| PointPair::new(p, p)).collect();
        assert!(estimate_homography(&all_on_line).is_err());
    }

    #[test]
    fn text_round_trip() {
        let h = Homography::new(Matrix3::new(1.1, 0.02, 3.5, -0.01, 0.97, -2.25, 1e-4, -2e-4, 1.0)).unwrap();
        let mut buf = Vec::new();
        h.write_text(&mut buf).unwrap();
        assert_eq!(Homography::read_text(&buf[..]).unwrap(), h);
        assert!(Homography::read_text(&b"1 2 3"[..]).is_err());
    }

    #[test]
    fn singular_rejected() {
        assert!(Homography::new(Matrix3::zeros()).is_err());
    }

    #[test]
    fn warp_identity_and_translation() {
        let f = Frame::from_fn(6, 5, |x, y| ((x + 2 * y) % 7) as f64 / 6.0).unwrap();
        assert_eq!(warp_frame(&f, &Homography::identity(), 6, 5), f);
        let g = warp_frame(&f, &Homography::translation(2.0, 1.0), 6, 5);
        for y in 0..5 {
            for x in 0..6 {
                let expect = if x >= 2 && y >= 1 { f.at(x - 2, y - 1) } else { 0.0 };
                assert!((g.at(x, y) - expect).abs() < 1e-12, "({x},{y})");
            }
        }
    }

    #[test]
    fn warp_events_translation() {
        let ev = vec![
            Event::new(1, 0, 0, Polarity::Positive),
            Event::new(2, 3, 1, Polarity::Negative),
            Event::new(3, 2, 2, Polarity::Positive),
        ];
        let s = EventStream::new(4, 3, 0, 5, ev).unwrap();
        assert_eq!(warp_events(&s, &Homography::identity(), 4, 3).unwrap(), s);
        let moved = warp_events(&s, &Homography::translation(1.0, 0.0), 4, 3).unwrap();
        let xs: Vec<u16> = moved.events().iter().map(|e| e.x).collect();
        assert_eq!(xs, vec![1, 3]);
    }

    #[test]
    fn correspondence_csv() {
        let text = "x,y,xp,yp\n0,0,1,1\n2, 0, 3, 1\n";
        let p = read_correspondences(text.as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[1], PointPair::new([2.0, 0.0], [3.0, 1.0]));
        assert!(read_correspondences("0,0,1\n".as_bytes()).is_err());
    }
}
