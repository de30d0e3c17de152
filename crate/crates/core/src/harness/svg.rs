use super::infer::ImageResult;
use crate::geometry::Point2;
use std::fmt::Write;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;").replace('\'', "&apos;")
}

fn path_data(points: &[Point2], closed: bool) -> String {
    let mut d = String::new();
    for (i, p) in points.iter().enumerate() {
        let _ = write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, p.x, p.y);
    }
    if closed {
        d.push('Z');
    }
    d.trim_end().to_string()
}

/// Overlay with one `<path>` per instance: its polygon, or its center line
/// when no polygon exists. `image_href` is drawn underneath when given.
pub fn overlay_svg(result: &ImageResult, image_href: Option<&str>) -> String {
    let (w, h) = (result.width, result.height);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    if let Some(href) = image_href {
        let _ = writeln!(s, "  <image href=\"{}\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\"/>", escape(href));
    }
    for inst in &result.instances {
        let (d, color) = match &inst.polygon {
            Some(poly) => (path_data(poly, true), if inst.valid_polygon { "#00c853" } else { "#ff6d00" }),
            None => (path_data(&inst.center, false), "#2962ff"),
        };
        let _ = writeln!(s, "  <path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>");
        if let Some(p) = inst.center.first() {
            let _ = writeln!(
                s,
                "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"8\" fill=\"{color}\">{} {:.2}</text>",
                p.x,
                p.y - 2.0,
                escape(&inst.transcript),
                inst.confidence
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
