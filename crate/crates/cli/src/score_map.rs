//! Top-down score map: occupancy background with every evaluated pose drawn as an arrow.

use image::{Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_line_segment_mut};
use mobipose::geometry::Pose2D;
use mobipose::occupancy::{Cell, OccupancyGrid};
use mobipose::scoring::ScoreResult;

use crate::error::CliError;

pub const FREE: Rgb<u8> = Rgb([255, 255, 255]);
/// Occupied and never-observed cells share this color (both block the robot).
pub const OCCUPIED: Rgb<u8> = Rgb([128, 128, 128]);
pub const COLLISION: Rgb<u8> = Rgb([255, 105, 180]);
pub const NO_OBJECT: Rgb<u8> = Rgb([0, 0, 0]);
pub const ORACLE: Rgb<u8> = Rgb([139, 0, 0]);
pub const START: Rgb<u8> = Rgb([0, 100, 0]);

/// Pixels per grid cell.
pub const CELL_PX: u32 = 8;
const ARROW_PX: f32 = 14.0;
const MARKER_ARROW_PX: f32 = 24.0;

/// Blue (0) through green to red (1); input clamped to [0, 1].
pub fn rainbow(value: f64) -> Rgb<u8> {
    let v = if value.is_finite() { value.clamp(0.0, 1.0) } else { 0.0 };
    let hue = (1.0 - v) * 240.0;
    let x = 1.0 - ((hue / 60.0) % 2.0 - 1.0).abs();
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        _ => (0.0, x, 1.0),
    };
    Rgb([(r * 255.0f64).round() as u8, (g * 255.0f64).round() as u8, (b * 255.0f64).round() as u8])
}

/// Arrow color for one evaluated pose.
pub fn pose_color(r: &ScoreResult) -> Rgb<u8> {
    if !r.k_col {
        COLLISION
    } else if !r.k_obj {
        NO_OBJECT
    } else {
        rainbow(r.k_id)
    }
}

struct Frame {
    origin: [f64; 2],
    resolution: f64,
    height_px: u32,
}

impl Frame {
    fn to_px(&self, x: f64, y: f64) -> (f32, f32) {
        let scale = CELL_PX as f64 / self.resolution;
        let u = (x - self.origin[0]) * scale;
        let v = self.height_px as f64 - (y - self.origin[1]) * scale;
        (u as f32, v as f32)
    }
}

fn draw_arrow(img: &mut RgbImage, frame: &Frame, p: &Pose2D, len: f32, dot: i32, color: Rgb<u8>) {
    let (u, v) = frame.to_px(p.x, p.y);
    let (c, s) = (p.theta.cos() as f32, p.theta.sin() as f32);
    // Image v grows downward, so the heading's y component flips.
    let tip = (u + len * c, v - len * s);
    draw_line_segment_mut(img, (u, v), tip, color);
    let head = len * 0.35;
    for side in [2.6f32, -2.6] {
        let (hc, hs) = ((p.theta as f32 + side).cos(), (p.theta as f32 + side).sin());
        draw_line_segment_mut(img, tip, (tip.0 + head * hc, tip.1 - head * hs), color);
    }
    draw_filled_circle_mut(img, (u.round() as i32, v.round() as i32), dot, color);
}

/// Renders the score map. Poses outside the grid are skipped; a trace with no pose inside the
/// grid is a frame mismatch.
pub fn emit_score_map(trace: &[ScoreResult], grid: &OccupancyGrid, oracle: Option<&Pose2D>, start: Option<&Pose2D>) -> Result<RgbImage, CliError> {
    if trace.is_empty() {
        return Err(CliError::config("empty trace", "score map needs at least one evaluated pose"));
    }
    if !trace.iter().any(|r| grid.cell_of(r.pose.x, r.pose.y).is_some()) {
        return Err(CliError::config("trace/grid frame mismatch", "no evaluated pose lies inside the grid"));
    }
    let (w, h) = grid.dims();
    let (wp, hp) = (w as u32 * CELL_PX, h as u32 * CELL_PX);
    let mut img = RgbImage::from_pixel(wp, hp, FREE);
    for iy in 0..h {
        for ix in 0..w {
            if grid.get(ix, iy) == Cell::Free {
                continue;
            }
            let top = (h - 1 - iy) as u32 * CELL_PX;
            for dy in 0..CELL_PX {
                for dx in 0..CELL_PX {
                    img.put_pixel(ix as u32 * CELL_PX + dx, top + dy, OCCUPIED);
                }
            }
        }
    }
    let frame = Frame { origin: grid.origin(), resolution: grid.resolution(), height_px: hp };

    // Gate failures first, then passing poses by ascending K_id so the best end up on top.
    let mut order: Vec<usize> = (0..trace.len()).filter(|&i| grid.cell_of(trace[i].pose.x, trace[i].pose.y).is_some()).collect();
    let rank = |r: &ScoreResult| match (r.k_col, r.k_obj) {
        (false, _) => (0, 0.0),
        (true, false) => (1, 0.0),
        (true, true) => (2, r.k_id),
    };
    order.sort_by(|&a, &b| {
        let (ra, rb) = (rank(&trace[a]), rank(&trace[b]));
        ra.0.cmp(&rb.0).then(ra.1.total_cmp(&rb.1)).then(a.cmp(&b))
    });
    for i in order {
        draw_arrow(&mut img, &frame, &trace[i].pose, ARROW_PX, 2, pose_color(&trace[i]));
    }
    if let Some(s) = start {
        draw_arrow(&mut img, &frame, s, MARKER_ARROW_PX, 4, START);
    }
    if let Some(o) = oracle {
        draw_arrow(&mut img, &frame, o, MARKER_ARROW_PX, 4, ORACLE);
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mobipose::occupancy::Bounds2D;

    fn free_grid() -> OccupancyGrid {
        OccupancyGrid::new(Bounds2D { min: [0.0, 0.0], max: [2.0, 2.0] }, 0.05, (0.1, 1.6), Cell::Free).unwrap()
    }

    fn result(x: f64, y: f64, k_col: bool, k_obj: bool, k_id: f64) -> ScoreResult {
        let mut r = ScoreResult::plain(Pose2D::new(x, y, 0.0), None, if k_col && k_obj { k_id } else { 0.0 });
        r.k_col = k_col;
        r.k_obj = k_obj;
        r.k_id = k_id;
        r
    }

    fn count(img: &RgbImage, c: Rgb<u8>) -> usize {
        img.pixels().filter(|p| **p == c).count()
    }

    #[test]
    fn rainbow_endpoints() {
        assert_eq!(rainbow(0.0), Rgb([0, 0, 255]));
        assert_eq!(rainbow(0.5), Rgb([0, 255, 0]));
        assert_eq!(rainbow(1.0), Rgb([255, 0, 0]));
        assert_eq!(rainbow(7.0), rainbow(1.0));
    }

    #[test]
    fn single_collision_pose_is_one_pink_arrow() {
        let img = emit_score_map(&[result(1.0, 1.0, false, false, 0.0)], &free_grid(), None, None).unwrap();
        assert!(count(&img, COLLISION) > 0);
        let others = img.pixels().filter(|p| **p != FREE && **p != COLLISION).count();
        assert_eq!(others, 0);
        // The pose center lands on the pink dot.
        assert_eq!(*img.get_pixel(160, 160), COLLISION);
    }

    #[test]
    fn passing_poses_on_free_grid() {
        let trace = [result(0.5, 0.5, true, true, 0.0), result(1.0, 1.0, true, true, 0.5), result(1.5, 1.5, true, true, 1.0)];
        let img = emit_score_map(&trace, &free_grid(), None, None).unwrap();
        assert_eq!(count(&img, OCCUPIED), 0);
        for (r, (u, v)) in trace.iter().zip([(80, 240), (160, 160), (240, 80)]) {
            assert_eq!(*img.get_pixel(u, v), rainbow(r.k_id));
            assert!(count(&img, rainbow(r.k_id)) > 10);
        }
    }

    #[test]
    fn legend_colors_by_pixel() {
        let mut grid = free_grid();
        grid.set(0, 0, Cell::Occupied);
        grid.set(1, 0, Cell::Unknown);
        let trace = [result(1.0, 1.0, true, false, 0.9), result(0.5, 1.5, false, true, 0.9)];
        let img = emit_score_map(&trace, &grid, Some(&Pose2D::new(1.5, 0.5, 0.0)), Some(&Pose2D::new(0.5, 0.5, 0.0))).unwrap();
        let bottom = img.height() - 1;
        assert_eq!(*img.get_pixel(0, bottom), OCCUPIED);
        assert_eq!(*img.get_pixel(CELL_PX, bottom), OCCUPIED);
        assert_eq!(*img.get_pixel(2 * CELL_PX, bottom), FREE);
        assert_eq!(*img.get_pixel(160, 160), NO_OBJECT);
        assert_eq!(*img.get_pixel(80, 80), COLLISION);
        assert_eq!(*img.get_pixel(240, 240), ORACLE);
        assert_eq!(*img.get_pixel(80, 240), START);
    }

    #[test]
    fn deterministic_and_checked() {
        let trace = [result(1.0, 1.0, true, true, 0.3), result(0.3, 1.2, false, false, 0.0)];
        let a = crate::output::png_bytes(&emit_score_map(&trace, &free_grid(), None, None).unwrap()).unwrap();
        let b = crate::output::png_bytes(&emit_score_map(&trace, &free_grid(), None, None).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(emit_score_map(&[], &free_grid(), None, None).is_err());
        let err = emit_score_map(&[result(5.0, 5.0, true, true, 0.3)], &free_grid(), None, None).unwrap_err();
        assert_eq!(err.error, "trace/grid frame mismatch");
    }
}
