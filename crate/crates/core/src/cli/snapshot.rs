//! Top-down orthographic raster of a scene as a binary portable pixmap.

use crate::world::{Color, Kind, ObjectRecord, WorldState};

/// Pixels per meter.
pub const SCALE: f64 = 400.0;

const BACKGROUND: [u8; 3] = [236, 228, 214];
const OUTLINE_PX: f64 = 2.0;

pub fn palette(c: Color) -> [u8; 3] {
    match c {
        Color::Red => [214, 39, 40],
        Color::Yellow => [240, 200, 30],
        Color::Blue => [31, 100, 200],
        Color::Green => [44, 160, 44],
        Color::Orange => [255, 127, 14],
        Color::Purple => [148, 80, 189],
        Color::Gray => [127, 127, 127],
        Color::Brown => [140, 86, 75],
    }
}

fn darker(c: [u8; 3]) -> [u8; 3] {
    c.map(|v| (v as u16 * 3 / 5) as u8)
}

pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl Raster {
    pub fn get(&self, col: usize, row: usize) -> [u8; 3] {
        self.pixels[row * self.width + col]
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }
}

/// Image column for table `y` (left, y-, is column 0) and row for `x`
/// (back of the table is row 0).
pub fn pixel_of(world: &WorldState, p: [f64; 2]) -> (usize, usize) {
    let b = &world.bounds;
    let col = ((p[1] - b.y[0]) * SCALE).floor().max(0.0) as usize;
    let row = ((p[0] - b.x[0]) * SCALE).floor().max(0.0) as usize;
    (col, row)
}

fn outlined(o: &ObjectRecord) -> bool {
    matches!(o.kind, Kind::Zone | Kind::Fixture | Kind::Bowl)
}

pub fn render(world: &WorldState) -> Raster {
    let b = &world.bounds;
    let width = ((b.y[1] - b.y[0]) * SCALE).round() as usize;
    let height = ((b.x[1] - b.x[0]) * SCALE).round() as usize;
    let mut pixels = vec![BACKGROUND; width * height];
    let mut order: Vec<&ObjectRecord> = world.objects.iter().collect();
    // Flat outlines first, then solids from the bottom up.
    order.sort_by(|a, c| {
        outlined(c).cmp(&outlined(a)).then(a.bottom().total_cmp(&c.bottom())).then_with(|| a.id.cmp(&c.id))
    });
    let border = OUTLINE_PX / SCALE;
    for o in order {
        let fp = o.footprint();
        let (lo, hi) = fp.extent();
        let (c0, r0) = pixel_of(world, lo);
        let (c1, r1) = pixel_of(world, hi);
        let fill = palette(o.color);
        let edge = darker(fill);
        for row in r0..=r1.min(height.saturating_sub(1)) {
            for col in c0..=c1.min(width.saturating_sub(1)) {
                let p = [b.x[0] + (row as f64 + 0.5) / SCALE, b.y[0] + (col as f64 + 0.5) / SCALE];
                if !fp.contains_point(p, 0.0) {
                    continue;
                }
                let inner = fp.contains_point(p, -border);
                let px = &mut pixels[row * width + col];
                if !inner {
                    *px = if outlined(o) { fill } else { edge };
                } else if !outlined(o) {
                    *px = fill;
                }
            }
        }
    }
    Raster { width, height, pixels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Bounds;

    #[test]
    fn empty_table_is_uniform() {
        let w = WorldState::new(Bounds::default(), 0);
        let r = render(&w);
        assert_eq!((r.width, r.height), (400, 200));
        assert!(r.pixels.iter().all(|p| *p == BACKGROUND));
        let ppm = r.to_ppm();
        assert!(ppm.starts_with(b"P6\n400 200\n255\n"));
        assert_eq!(ppm.len(), "P6\n400 200\n255\n".len() + 400 * 200 * 3);
    }

    #[test]
    fn final_scene_shows_top_block_colors() {
        use crate::orchestrator::{run_episode, EpisodeConfig, LoopLimits, Mode};
        let spec = crate::tasks::lookup("G1").unwrap();
        let r = run_episode(spec, 0, Mode::ClosedLoop, &EpisodeConfig::default(), &LoopLimits::default()).unwrap();
        let w = &r.final_world;
        let img = render(w);
        let mut seen = 0;
        for o in w.objects.iter().filter(|o| o.kind == Kind::Block) {
            let c = { let (lo, hi) = o.footprint().extent(); [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0] };
            let top = w
                .objects
                .iter()
                .filter(|x| !outlined(x) && x.footprint().contains_point(c, 0.0))
                .max_by(|a, b| a.top().total_cmp(&b.top()))
                .unwrap();
            let (col, row) = pixel_of(w, c);
            assert_eq!(img.get(col, row), palette(top.color), "{} at {c:?}", o.id);
            seen += 1;
        }
        assert!(seen > 0);
        assert_eq!(render(w).to_ppm(), img.to_ppm());
    }
}
