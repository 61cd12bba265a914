//! Deterministic SVG rendering of phase diagrams.
//!
//! Each parameter cell becomes a colored rectangle keyed by the predicted
//! stability signature, with the analytic fold and stability boundary curves
//! drawn on top and a legend listing exactly the classes that occur.

use std::io::Write as _;
use std::path::Path;

use super::{PhaseDiagram, SignatureClass};
use crate::system::{gray_scott_stability_margin, AxisBox};
use crate::Error;

const MARGIN_LEFT: f64 = 60.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 45.0;
const PLOT_W: f64 = 560.0;
const PLOT_H: f64 = 420.0;
const LEGEND_W: f64 = 190.0;

fn class_color(class: SignatureClass) -> &'static str {
    match class {
        SignatureClass::None => "#e8e8e8",
        SignatureClass::TwoUnstable => "#e4572e",
        SignatureClass::OneStableOneUnstable => "#2e86ab",
        SignatureClass::TwoStable => "#76b041",
        SignatureClass::Other => "#8e44ad",
    }
}

/// The two branches of the fold curve f = 4(f+k)², sampled densely in k.
/// Every emitted point satisfies the defining equation to roundoff.
pub fn fold_curve_branches(samples: usize) -> Vec<Vec<[f64; 2]>> {
    let k_max = 1.0 / 16.0;
    let mut upper = Vec::with_capacity(samples);
    let mut lower = Vec::with_capacity(samples);
    for i in 0..samples {
        let k = k_max * i as f64 / (samples - 1) as f64;
        let root = (1.0 - 16.0 * k).max(0.0).sqrt();
        upper.push([(1.0 - 8.0 * k + root) / 8.0, k]);
        lower.push([(1.0 - 8.0 * k - root) / 8.0, k]);
    }
    vec![upper, lower]
}

/// The stability boundary inside the two-solution region, located by
/// bisection of the sign expression along f for each sampled k.
pub fn stability_curve(samples: usize) -> Vec<[f64; 2]> {
    let k_max = 1.0 / 16.0;
    let mut points = Vec::new();
    for i in 0..samples {
        let k = k_max * i as f64 / (samples - 1) as f64;
        let root = (1.0 - 16.0 * k).max(0.0).sqrt();
        let f_lo = (1.0 - 8.0 * k - root) / 8.0;
        let f_hi = (1.0 - 8.0 * k + root) / 8.0;
        if f_hi - f_lo < 1e-9 {
            continue;
        }
        // Stay strictly inside the fold so the expression is defined.
        let inset = (f_hi - f_lo) * 1e-6;
        let (mut a, mut b) = (f_lo + inset, f_hi - inset);
        let mut fa = gray_scott_stability_margin(&[a, k]);
        let fb = gray_scott_stability_margin(&[b, k]);
        if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
            continue;
        }
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            let fm = gray_scott_stability_margin(&[mid, k]);
            if fm.signum() == fa.signum() {
                a = mid;
                fa = fm;
            } else {
                b = mid;
            }
        }
        points.push([0.5 * (a + b), k]);
    }
    points
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

struct Frame {
    omega_lo: [f64; 2],
    omega_hi: [f64; 2],
}

impl Frame {
    fn x(&self, f: f64) -> f64 {
        MARGIN_LEFT + (f - self.omega_lo[0]) / (self.omega_hi[0] - self.omega_lo[0]) * PLOT_W
    }

    fn y(&self, k: f64) -> f64 {
        MARGIN_TOP + (self.omega_hi[1] - k) / (self.omega_hi[1] - self.omega_lo[1]) * PLOT_H
    }

    fn polyline(&self, points: &[[f64; 2]], style: &str) -> String {
        let coords: Vec<String> = points
            .iter()
            .map(|p| format!("{},{}", px(self.x(p[0])), px(self.y(p[1]))))
            .collect();
        format!("<polyline points=\"{}\" {} />\n", coords.join(" "), style)
    }
}

fn frame_for(omega: &AxisBox) -> Frame {
    Frame {
        omega_lo: [omega.lo()[0], omega.lo()[1]],
        omega_hi: [omega.hi()[0], omega.hi()[1]],
    }
}

/// Renders the predicted-signature map with analytic boundary overlays.
/// Output bytes are a pure function of the diagram.
pub fn phase_diagram_svg(diagram: &PhaseDiagram, path: &Path) -> Result<(), Error> {
    if diagram.cells.is_empty() {
        return Err(Error::Contract("phase diagram has no cells".into()));
    }
    let frame = frame_for(&diagram.omega);
    let width = MARGIN_LEFT + PLOT_W + LEGEND_W;
    let height = MARGIN_TOP + PLOT_H + MARGIN_BOTTOM;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\">\n",
        px(width),
        px(height),
        px(width),
        px(height)
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\" />\n");

    let cw = PLOT_W / diagram.counts[0] as f64;
    let ch = PLOT_H / diagram.counts[1] as f64;
    for cell in &diagram.cells {
        let x = frame.x(cell.theta[0]) - 0.5 * cw;
        let y = frame.y(cell.theta[1]) - 0.5 * ch;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\" />\n",
            px(x),
            px(y),
            px(cw + 0.1),
            px(ch + 0.1),
            class_color(cell.signature)
        ));
    }

    let fold_style = "fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"";
    for branch in fold_curve_branches(201) {
        svg.push_str(&frame.polyline(&branch, fold_style));
    }
    let stb = stability_curve(401);
    if stb.len() >= 2 {
        let style = "fill=\"none\" stroke=\"black\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\"";
        svg.push_str(&frame.polyline(&stb, style));
    }

    // Axes frame and labels.
    svg.push_str(&format!(
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\" />\n",
        px(MARGIN_LEFT),
        px(MARGIN_TOP),
        px(PLOT_W),
        px(PLOT_H)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">f</text>\n",
        px(MARGIN_LEFT + PLOT_W / 2.0),
        px(MARGIN_TOP + PLOT_H + 32.0)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"14\">k</text>\n",
        px(MARGIN_LEFT - 30.0),
        px(MARGIN_TOP + PLOT_H / 2.0)
    ));
    for (value, label) in [
        (diagram.omega.lo()[0], "f-lo"),
        (diagram.omega.hi()[0], "f-hi"),
    ] {
        let _ = label;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            px(frame.x(value)),
            px(MARGIN_TOP + PLOT_H + 16.0),
            value
        ));
    }
    for value in [diagram.omega.lo()[1], diagram.omega.hi()[1]] {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            px(MARGIN_LEFT - 6.0),
            px(frame.y(value) + 4.0),
            value
        ));
    }

    // Legend: exactly the classes present in the diagram, in fixed order.
    let mut y = MARGIN_TOP + 10.0;
    for class in SignatureClass::ALL {
        if !diagram.cells.iter().any(|c| c.signature == class) {
            continue;
        }
        let x = MARGIN_LEFT + PLOT_W + 20.0;
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"14\" height=\"14\" fill=\"{}\" stroke=\"black\" />\n",
            px(x),
            px(y),
            class_color(class)
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            px(x + 20.0),
            px(y + 11.0),
            class.as_str()
        ));
        y += 22.0;
    }
    svg.push_str("</svg>\n");
    std::fs::File::create(path)?.write_all(svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::gray_scott_margin;
    use crate::evaluate::phase_diagram_with;
    use crate::system::gray_scott_solutions;

    fn omega_box() -> AxisBox {
        AxisBox::new(vec![0.0, 0.0], vec![0.3, 0.08]).unwrap()
    }

    #[test]
    fn fold_branches_satisfy_the_defining_equation() {
        let branches = fold_curve_branches(201);
        assert_eq!(branches.len(), 2);
        for branch in &branches {
            assert_eq!(branch.len(), 201);
            for p in branch {
                assert!(
                    gray_scott_margin(p).abs() < 1e-9,
                    "fold point {p:?} misses the curve"
                );
            }
        }
        // The two branches meet at the nose of the fold.
        let upper_end = branches[0].last().unwrap();
        let lower_end = branches[1].last().unwrap();
        assert!((upper_end[0] - lower_end[0]).abs() < 1e-12);
    }

    #[test]
    fn stability_curve_sits_on_the_sign_change() {
        let curve = stability_curve(101);
        assert!(curve.len() > 10, "expected a populated curve");
        for p in &curve {
            let m = gray_scott_stability_margin(p);
            assert!(m.abs() < 1e-8, "stability margin {m} at {p:?}");
            assert!(gray_scott_margin(p) > 0.0);
        }
    }

    fn tiny_diagram() -> PhaseDiagram {
        phase_diagram_with(
            |theta| {
                let n = gray_scott_solutions(theta).len();
                let class = if n == 0 {
                    SignatureClass::None
                } else {
                    SignatureClass::OneStableOneUnstable
                };
                Ok((n, class))
            },
            &omega_box(),
            &[12, 10],
        )
        .unwrap()
    }

    #[test]
    fn rendering_is_byte_deterministic() {
        let diagram = tiny_diagram();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.svg");
        let b = dir.path().join("b.svg");
        phase_diagram_svg(&diagram, &a).unwrap();
        phase_diagram_svg(&diagram, &b).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert!(!bytes_a.is_empty());
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn legend_lists_exactly_the_observed_classes() {
        let diagram = tiny_diagram();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.svg");
        phase_diagram_svg(&diagram, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert!(text.contains(">none</text>"));
        assert!(text.contains(">1-stable-1-unstable</text>"));
        assert!(!text.contains(">2-unstable</text>"));
        assert!(!text.contains(">2-stable</text>"));
        assert!(!text.contains(">other</text>"));
    }
}
