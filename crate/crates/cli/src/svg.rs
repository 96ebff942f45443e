//! Information-plane scatter: `I(Z;X)` horizontal, `I(Z;Y)` vertical, colored by epoch.

use std::collections::BTreeMap;
use std::fmt::Write;

use imb_core::InfoPlanePoint;

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Linear ramp through a few viridis anchors; `t` in [0, 1].
fn ramp(t: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        return 1.0;
    }
    let step = 10f64.powf(v.log10().floor()) / 2.0;
    (v / step).ceil() * step
}

pub fn info_plane_svg(points: &[InfoPlanePoint], title: &str) -> String {
    let x_max = nice_max(points.iter().map(|p| p.i_zx_bits).fold(0.0, f64::max));
    let y_max = nice_max(points.iter().map(|p| p.i_zy_bits).fold(0.0, f64::max));
    let (e_min, e_max) = points
        .iter()
        .fold((usize::MAX, 0), |(lo, hi), p| (lo.min(p.epoch), hi.max(p.epoch)));
    let span = (e_max.saturating_sub(e_min)).max(1) as f64;
    let px = |v: f64| MARGIN + v / x_max * (W - 2.0 * MARGIN);
    let py = |v: f64| H - MARGIN - v / y_max * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16" font-family="sans-serif">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11" font-family="sans-serif">{:.2}</text>"#,
            px(f * x_max),
            H - MARGIN + 16.0,
            f * x_max
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11" font-family="sans-serif">{:.2}</text>"#,
            MARGIN - 6.0,
            py(f * y_max) + 4.0,
            f * y_max
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="13" font-family="sans-serif">I(Z;X) [bits]</text>"#, W / 2.0, H - 18.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" font-size="13" font-family="sans-serif" transform="rotate(-90 18 {})">I(Z;Y) [bits]</text>"#,
        H / 2.0,
        H / 2.0
    );

    let mut by_epoch: BTreeMap<usize, Vec<&InfoPlanePoint>> = BTreeMap::new();
    for p in points {
        by_epoch.entry(p.epoch).or_default().push(p);
    }
    for (epoch, mut layer_points) in by_epoch {
        layer_points.sort_by_key(|p| p.layer);
        let color = ramp((epoch - e_min) as f64 / span);
        let path: Vec<String> = layer_points.iter().map(|p| format!("{:.2},{:.2}", px(p.i_zx_bits), py(p.i_zy_bits))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-opacity="0.35"/>"#, path.join(" "));
        for p in layer_points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"><title>epoch {} layer {}</title></circle>"#,
                px(p.i_zx_bits),
                py(p.i_zy_bits),
                p.epoch,
                p.layer
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="11" font-family="sans-serif">epochs {e_min}..{e_max}</text>"#,
        W - MARGIN,
        MARGIN - 8.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
    }

    #[test]
    fn one_circle_per_point() {
        let pts: Vec<InfoPlanePoint> = (0..3)
            .flat_map(|e| {
                (1..=2).map(move |l| InfoPlanePoint {
                    epoch: e * 10,
                    layer: l,
                    i_zx_bits: 3.0 - l as f64,
                    i_zy_bits: 0.1 * e as f64,
                })
            })
            .collect();
        let svg = info_plane_svg(&pts, "a<b");
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
