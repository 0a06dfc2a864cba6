//! Line-oriented run configuration.
//!
//! ```text
//! # comments start with '#'
//! [scheme]
//! T = 0.1
//! tau = 1/320
//! h = 1/40
//! eps = 1e-3
//! rho = 1
//! kappa = 1
//! n = 16
//! snapshot_every = 8
//!
//! [material]
//! p = 4
//! mu = 1
//! gamma = 0.1
//! q_det = 4
//! c_V = 1
//! alpha = 0.5
//! kappa0 = 1
//! C0 = 10
//!
//! [initial]
//! y0_amplitude = 0, 0
//! y0_mode = 1, 1
//! v0_amplitude = 0, 0
//! v0_mode = 1, 1
//! theta0 = 1
//! theta0_amplitude = 0
//! mollify_width = 0
//!
//! [forcing]
//! shape = gaussian          # none | uniform | gaussian
//! amplitude = 0, -50        # gaussian only
//! center = 0.5, 0.5         # gaussian only
//! width = 0.15              # gaussian only
//! value = 0, 0              # uniform only
//! time_coeffs = 1, 0, 0     # f(x,t) = shape(x) (c0 + c1 t + c2 t^2)
//! theta_b = 1, 0, 0         # theta_b(t) = b0 + b1 t + b2 t^2
//! ```
//!
//! Scalars accept a fraction `a/b`. Keys left out keep the reference values
//! of [`SchemeConfig::default`]. Unknown sections, unknown keys and repeated
//! keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::driver::{ForceShape, SchemeConfig};
use crate::error::{Error, Result};

const SECTIONS: [&str; 4] = ["scheme", "material", "initial", "forcing"];

fn err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_scalar(text: &str, line: usize) -> Result<f64> {
    let text = text.trim();
    let value = match text.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| err(line, format!("bad number '{text}'")))?;
            let b: f64 = b.trim().parse().map_err(|_| err(line, format!("bad number '{text}'")))?;
            a / b
        }
        None => text.parse().map_err(|_| err(line, format!("bad number '{text}'")))?,
    };
    if !value.is_finite() {
        return Err(err(line, format!("non-finite value '{text}'")));
    }
    Ok(value)
}

fn parse_list<const N: usize>(text: &str, line: usize) -> Result<[f64; N]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != N {
        return Err(err(line, format!("expected {N} comma-separated values, got '{}'", text.trim())));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = parse_scalar(p, line)?;
    }
    Ok(out)
}

fn parse_count(text: &str, line: usize) -> Result<usize> {
    text.trim()
        .parse()
        .map_err(|_| err(line, format!("expected a nonnegative integer, got '{}'", text.trim())))
}

fn parse_modes(text: &str, line: usize) -> Result<[u32; 2]> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        return Err(err(line, format!("expected two integer modes, got '{}'", text.trim())));
    }
    let a = parse_count(parts[0], line)? as u32;
    let b = parse_count(parts[1], line)? as u32;
    Ok([a, b])
}

struct Entry {
    line: usize,
    value: String,
}

type Sections = BTreeMap<String, BTreeMap<String, Entry>>;

fn split_sections(text: &str) -> Result<Sections> {
    let mut sections: Sections = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, format!("malformed section header '{content}'")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(line, format!("unknown section [{name}]")));
            }
            sections.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key = value, got '{content}'")))?;
        let section = current
            .as_ref()
            .ok_or_else(|| err(line, "key outside of any section"))?;
        let key = key.trim().to_string();
        let map = sections.get_mut(section).expect("section exists");
        if map.contains_key(&key) {
            return Err(err(line, format!("duplicate key '{key}' in [{section}]")));
        }
        map.insert(
            key,
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }
    Ok(sections)
}

fn take(map: &mut BTreeMap<String, Entry>, key: &str) -> Option<Entry> {
    map.remove(key)
}

/// Parse a config file body.
pub fn parse_config(text: &str) -> Result<SchemeConfig> {
    let mut sections = split_sections(text)?;
    let mut cfg = SchemeConfig::default();

    if let Some(map) = sections.get_mut("scheme") {
        for (key, slot) in [
            ("T", &mut cfg.t_final),
            ("tau", &mut cfg.tau),
            ("h", &mut cfg.h),
            ("eps", &mut cfg.eps),
            ("rho", &mut cfg.rho),
            ("kappa", &mut cfg.kappa),
        ] {
            if let Some(e) = take(map, key) {
                *slot = parse_scalar(&e.value, e.line)?;
            }
        }
        if let Some(e) = take(map, "n") {
            cfg.n = parse_count(&e.value, e.line)?;
        }
        if let Some(e) = take(map, "snapshot_every") {
            cfg.snapshot_every = parse_count(&e.value, e.line)?;
        }
    }

    if let Some(map) = sections.get_mut("material") {
        let m = &mut cfg.material;
        for (key, slot) in [
            ("p", &mut m.p),
            ("mu", &mut m.mu),
            ("gamma", &mut m.gamma),
            ("q_det", &mut m.q_det),
            ("c_V", &mut m.c_v),
            ("alpha", &mut m.alpha),
            ("kappa0", &mut m.kappa0),
            ("C0", &mut m.c0),
        ] {
            if let Some(e) = take(map, key) {
                *slot = parse_scalar(&e.value, e.line)?;
            }
        }
    }

    if let Some(map) = sections.get_mut("initial") {
        let ini = &mut cfg.initial;
        for (key, slot) in [("y0_amplitude", &mut ini.y0_amplitude), ("v0_amplitude", &mut ini.v0_amplitude)] {
            if let Some(e) = take(map, key) {
                *slot = parse_list::<2>(&e.value, e.line)?;
            }
        }
        for (key, slot) in [("y0_mode", &mut ini.y0_mode), ("v0_mode", &mut ini.v0_mode)] {
            if let Some(e) = take(map, key) {
                *slot = parse_modes(&e.value, e.line)?;
            }
        }
        for (key, slot) in [
            ("theta0", &mut ini.theta0),
            ("theta0_amplitude", &mut ini.theta0_amplitude),
            ("mollify_width", &mut ini.mollify_width),
        ] {
            if let Some(e) = take(map, key) {
                *slot = parse_scalar(&e.value, e.line)?;
            }
        }
    }

    if let Some(map) = sections.get_mut("forcing") {
        let fs = &mut cfg.forcing;
        if let Some(e) = take(map, "time_coeffs") {
            fs.time_coeffs = parse_list::<3>(&e.value, e.line)?;
        }
        if let Some(e) = take(map, "theta_b") {
            fs.theta_b = parse_list::<3>(&e.value, e.line)?;
        }
        let shape_entry = take(map, "shape");
        let kind = shape_entry.as_ref().map(|e| e.value.to_ascii_lowercase());
        let (amplitude, center, width) = match &fs.shape {
            ForceShape::Gaussian {
                amplitude,
                center,
                width,
            } => (*amplitude, *center, *width),
            _ => ([0.0, 0.0], [0.5, 0.5], 0.1),
        };
        match kind.as_deref() {
            Some("none") => fs.shape = ForceShape::None,
            Some("uniform") => {
                let e = take(map, "value").ok_or_else(|| Error::Config("uniform forcing needs 'value'".into()))?;
                fs.shape = ForceShape::Uniform {
                    value: parse_list::<2>(&e.value, e.line)?,
                };
            }
            Some("gaussian") | None => {
                let mut amplitude = amplitude;
                let mut center = center;
                let mut width = width;
                if let Some(e) = take(map, "amplitude") {
                    amplitude = parse_list::<2>(&e.value, e.line)?;
                }
                if let Some(e) = take(map, "center") {
                    center = parse_list::<2>(&e.value, e.line)?;
                }
                if let Some(e) = take(map, "width") {
                    width = parse_scalar(&e.value, e.line)?;
                }
                fs.shape = ForceShape::Gaussian {
                    amplitude,
                    center,
                    width,
                };
            }
            Some(other) => {
                let line = shape_entry.map(|e| e.line).unwrap_or(0);
                return Err(err(line, format!("unknown forcing shape '{other}'")));
            }
        }
    }

    for (section, map) in &sections {
        if let Some((key, e)) = map.iter().next() {
            return Err(err(e.line, format!("unknown key '{key}' in [{section}]")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SchemeConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Serialize into the file format; `parse_config(&render_config(c)) == c`.
pub fn render_config(cfg: &SchemeConfig) -> String {
    let mut s = String::new();
    let m = &cfg.material;
    let ini = &cfg.initial;
    let fs = &cfg.forcing;
    let pair = |a: [f64; 2]| format!("{:?}, {:?}", a[0], a[1]);
    let triple = |a: [f64; 3]| format!("{:?}, {:?}, {:?}", a[0], a[1], a[2]);
    let _ = writeln!(s, "[scheme]");
    let _ = writeln!(s, "T = {:?}", cfg.t_final);
    let _ = writeln!(s, "tau = {:?}", cfg.tau);
    let _ = writeln!(s, "h = {:?}", cfg.h);
    let _ = writeln!(s, "eps = {:?}", cfg.eps);
    let _ = writeln!(s, "rho = {:?}", cfg.rho);
    let _ = writeln!(s, "kappa = {:?}", cfg.kappa);
    let _ = writeln!(s, "n = {}", cfg.n);
    let _ = writeln!(s, "snapshot_every = {}", cfg.snapshot_every);
    let _ = writeln!(s, "\n[material]");
    let _ = writeln!(s, "p = {:?}", m.p);
    let _ = writeln!(s, "mu = {:?}", m.mu);
    let _ = writeln!(s, "gamma = {:?}", m.gamma);
    let _ = writeln!(s, "q_det = {:?}", m.q_det);
    let _ = writeln!(s, "c_V = {:?}", m.c_v);
    let _ = writeln!(s, "alpha = {:?}", m.alpha);
    let _ = writeln!(s, "kappa0 = {:?}", m.kappa0);
    let _ = writeln!(s, "C0 = {:?}", m.c0);
    let _ = writeln!(s, "\n[initial]");
    let _ = writeln!(s, "y0_amplitude = {}", pair(ini.y0_amplitude));
    let _ = writeln!(s, "y0_mode = {}, {}", ini.y0_mode[0], ini.y0_mode[1]);
    let _ = writeln!(s, "v0_amplitude = {}", pair(ini.v0_amplitude));
    let _ = writeln!(s, "v0_mode = {}, {}", ini.v0_mode[0], ini.v0_mode[1]);
    let _ = writeln!(s, "theta0 = {:?}", ini.theta0);
    let _ = writeln!(s, "theta0_amplitude = {:?}", ini.theta0_amplitude);
    let _ = writeln!(s, "mollify_width = {:?}", ini.mollify_width);
    let _ = writeln!(s, "\n[forcing]");
    match &fs.shape {
        ForceShape::None => {
            let _ = writeln!(s, "shape = none");
        }
        ForceShape::Uniform { value } => {
            let _ = writeln!(s, "shape = uniform");
            let _ = writeln!(s, "value = {}", pair(*value));
        }
        ForceShape::Gaussian {
            amplitude,
            center,
            width,
        } => {
            let _ = writeln!(s, "shape = gaussian");
            let _ = writeln!(s, "amplitude = {}", pair(*amplitude));
            let _ = writeln!(s, "center = {}", pair(*center));
            let _ = writeln!(s, "width = {width:?}");
        }
    }
    let _ = writeln!(s, "time_coeffs = {}", triple(fs.time_coeffs));
    let _ = writeln!(s, "theta_b = {}", triple(fs.theta_b));
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_reference() {
        assert_eq!(parse_config("").unwrap(), SchemeConfig::default());
    }

    #[test]
    fn round_trip() {
        let mut cfg = SchemeConfig::default();
        cfg.initial.v0_amplitude = [0.5, -0.3];
        cfg.forcing.shape = ForceShape::Uniform { value: [0.1, 0.2] };
        assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
        let eq = SchemeConfig::equilibrium();
        assert_eq!(parse_config(&render_config(&eq)).unwrap(), eq);
    }

    #[test]
    fn fractions_and_comments() {
        let cfg = parse_config("[scheme]\ntau = 1/640 # finer\nT = 1/20\n").unwrap();
        assert_eq!(cfg.tau, 1.0 / 640.0);
        assert_eq!(cfg.t_final, 0.05);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = parse_config("[scheme]\ntua = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("unknown key 'tua'"));
        assert!(parse_config("[scheme]\ntau = 0.1\ntau = 0.2\n").is_err());
        assert!(parse_config("[solver]\n").is_err());
        assert!(parse_config("tau = 0.1\n").is_err());
        assert!(parse_config("[forcing]\nshape = none\nwidth = 0.1\n").is_err());
    }

    #[test]
    fn divisibility_is_named() {
        let e = parse_config("[scheme]\ntau = 0.007\n").unwrap_err();
        assert!(e.to_string().contains("h/tau"), "{e}");
    }
}
