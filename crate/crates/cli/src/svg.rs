//! Static SVG drawings of instances, tours and clusters.

use std::fmt::Write;

use mres_core::{Instance, Point, Solution};

const SIZE: f64 = 480.0;
const MARGIN: f64 = 16.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Frame {
    min: Point,
    scale: f64,
}

impl Frame {
    fn fit(points: &[Point]) -> Self {
        let (mut lo, mut hi) = (Point::new(f64::INFINITY, f64::INFINITY), Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for p in points {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-12);
        Frame {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    /// SVG y grows downwards.
    fn map(&self, p: Point) -> (f64, f64) {
        (
            MARGIN + (p.x - self.min.x) * self.scale,
            SIZE - MARGIN - (p.y - self.min.y) * self.scale,
        )
    }
}

fn closed_path(out: &mut String, frame: &Frame, inst: &Instance, seq: &[usize], color: &str) {
    let mut d = String::new();
    for (k, &v) in seq.iter().enumerate() {
        let (x, y) = frame.map(inst.coords()[v]);
        let _ = write!(d, "{}{:.3} {:.3} ", if k == 0 { "M" } else { "L" }, x, y);
    }
    d.push('Z');
    let _ = writeln!(
        out,
        r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
        d, color
    );
}

/// One instance with an optional solution drawn as closed paths (one per
/// CVRP route) and optional per-node cluster colours.
pub fn render(inst: &Instance, solution: Option<&Solution>, clusters: Option<&[usize]>) -> String {
    let frame = Frame::fit(inst.coords());
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = SIZE
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    match solution {
        Some(Solution::Tour(t)) => closed_path(&mut out, &frame, inst, t.order(), "#333333"),
        Some(Solution::Routes(s)) => {
            let depot = inst.depot().unwrap_or(0);
            for (r, route) in s.routes.iter().enumerate() {
                let mut seq = vec![depot];
                seq.extend(route);
                closed_path(&mut out, &frame, inst, &seq, PALETTE[r % PALETTE.len()]);
            }
        }
        None => {}
    }
    for (i, &p) in inst.coords().iter().enumerate() {
        let (x, y) = frame.map(p);
        if inst.depot() == Some(i) {
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="9" height="9" fill="black"/>"#,
                x - 4.5,
                y - 4.5
            );
            continue;
        }
        let color = clusters
            .and_then(|c| c.get(i))
            .map_or("#000000", |&c| PALETTE[c % PALETTE.len()]);
        let _ = writeln!(out, r#"<circle cx="{:.3}" cy="{:.3}" r="3.5" fill="{}"/>"#, x, y, color);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use mres_core::Tour;

    #[test]
    fn square_tour_has_four_vertices_and_a_closed_path() {
        let inst = Instance::tsp(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap();
        let svg = render(&inst, Some(&Solution::Tour(Tour(vec![0, 1, 2, 3]))), None);
        assert_eq!(svg.matches("<circle").count(), 4);
        assert_eq!(svg.matches("<path").count(), 1);
        let d = svg.split("d=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(d.matches('M').count() + d.matches('L').count(), 4);
        assert!(d.ends_with('Z'));
    }
}
