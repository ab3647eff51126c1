//! Benchmark configuration files: a strict INI dialect.
//!
//! Four sections are recognized — `[metric]`, `[controller]`, `[scenario]`,
//! `[run]` — and every key must be known. Unknown sections, unknown keys,
//! duplicate keys, and malformed values are hard errors (the CLI maps them
//! to exit code 2) so a typo can never silently fall back to a default.

use std::collections::HashSet;

use crate::camera::{MotionKind, SceneParams, ScenarioKind};
use crate::controller::{ControllerKind, ControllerParams};
use crate::error::{Error, Result};

/// Run-level defaults a config file may set; command-line flags override.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunDefaults {
    pub scenario: Option<ScenarioKind>,
    pub controller: Option<ControllerKind>,
    pub motion: Option<MotionKind>,
    pub frames: Option<u32>,
    pub seed: Option<u64>,
    pub dt0_ms: Option<f64>,
    pub noise: Option<bool>,
    pub fps: Option<f64>,
}

/// Parsed configuration: controller tuning (metric shape embedded), scene
/// synthesis constants, plus run defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub controller: ControllerParams,
    pub scene: SceneParams,
    pub run: RunDefaults,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            controller: ControllerParams::default(),
            scene: SceneParams::default(),
            run: RunDefaults::default(),
        }
    }
}

fn cfg_err(line_no: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line_no}: {msg}"))
}

fn parse_f64(line_no: usize, key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| cfg_err(line_no, format!("key '{key}' expects a number, got '{value}'")))
}

fn parse_bool(line_no: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(cfg_err(line_no, format!("key '{key}' expects on/off, got '{value}'"))),
    }
}

/// Parse a config file's text, starting from built-in defaults.
pub fn parse_config(text: &str) -> Result<Config> {
    let mut cfg = Config::default();
    let mut section: Option<String> = None;
    let mut seen: HashSet<String> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| cfg_err(line_no, "unterminated section header"))?
                .trim()
                .to_string();
            match name.as_str() {
                "metric" | "controller" | "scenario" | "run" => section = Some(name),
                other => return Err(cfg_err(line_no, format!("unknown section '[{other}]'"))),
            }
            continue;
        }
        let Some(section) = section.as_deref() else {
            return Err(cfg_err(line_no, "key outside of any section"));
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(cfg_err(line_no, format!("expected 'key = value', got '{line}'")));
        };
        let key = key.trim();
        let value = value.trim();
        if key.is_empty() || value.is_empty() {
            return Err(cfg_err(line_no, "empty key or value"));
        }
        if !seen.insert(format!("{section}.{key}")) {
            return Err(cfg_err(line_no, format!("duplicate key '{key}' in [{section}]")));
        }

        match section {
            "metric" => match key {
                "p" => cfg.controller.metric.p = parse_f64(line_no, key, value)?,
                "k" => cfg.controller.metric.k = parse_f64(line_no, key, value)?,
                other => return Err(cfg_err(line_no, format!("unknown key '{other}' in [metric]"))),
            },
            "controller" => match key {
                "eta" => cfg.controller.eta = parse_f64(line_no, key, value)?,
                "momentum" => cfg.controller.momentum = parse_f64(line_no, key, value)?,
                "deadband" => cfg.controller.deadband = parse_f64(line_no, key, value)?,
                "hold_frames" => {
                    cfg.controller.hold_frames = value.parse::<u32>().map_err(|_| {
                        cfg_err(line_no, format!("key 'hold_frames' expects an integer, got '{value}'"))
                    })?
                }
                "sat_escape_frac" => cfg.controller.sat_escape_frac = parse_f64(line_no, key, value)?,
                "dark_escape_mean" => cfg.controller.dark_escape_mean = parse_f64(line_no, key, value)?,
                "ae_target_dn" => cfg.controller.ae_target_dn = parse_f64(line_no, key, value)?,
                "ae_exponent" => cfg.controller.ae_exponent = parse_f64(line_no, key, value)?,
                other => return Err(cfg_err(line_no, format!("unknown key '{other}' in [controller]"))),
            },
            "scenario" => match key {
                "marker_side_m" => cfg.scene.marker_side_m = parse_f64(line_no, key, value)?,
                "glare_peak_per_ms" => cfg.scene.glare_peak_per_ms = parse_f64(line_no, key, value)?,
                "glare_sigma_scale" => cfg.scene.glare_sigma_scale = parse_f64(line_no, key, value)?,
                "texture_contrast" => cfg.scene.texture_contrast = parse_f64(line_no, key, value)?,
                other => return Err(cfg_err(line_no, format!("unknown key '{other}' in [scenario]"))),
            },
            "run" => match key {
                "scenario" => {
                    cfg.run.scenario = Some(
                        ScenarioKind::parse(value).map_err(|_| cfg_err(line_no, format!("unknown scenario '{value}'")))?,
                    )
                }
                "controller" => {
                    cfg.run.controller = Some(
                        ControllerKind::parse(value)
                            .map_err(|_| cfg_err(line_no, format!("unknown controller '{value}'")))?,
                    )
                }
                "motion" => {
                    cfg.run.motion = Some(
                        MotionKind::parse(value).map_err(|_| cfg_err(line_no, format!("unknown motion '{value}'")))?,
                    )
                }
                "frames" => {
                    cfg.run.frames = Some(value.parse::<u32>().map_err(|_| {
                        cfg_err(line_no, format!("key 'frames' expects an integer, got '{value}'"))
                    })?)
                }
                "seed" => {
                    cfg.run.seed = Some(value.parse::<u64>().map_err(|_| {
                        cfg_err(line_no, format!("key 'seed' expects an integer, got '{value}'"))
                    })?)
                }
                "dt0_ms" => cfg.run.dt0_ms = Some(parse_f64(line_no, key, value)?),
                "noise" => cfg.run.noise = Some(parse_bool(line_no, key, value)?),
                "fps" => cfg.run.fps = Some(parse_f64(line_no, key, value)?),
                other => return Err(cfg_err(line_no, format!("unknown key '{other}' in [run]"))),
            },
            _ => unreachable!("section names are validated above"),
        }
    }

    cfg.controller.validate().map_err(|e| Error::Config(format!("invalid parameters: {e}")))?;
    cfg.scene.validate().map_err(|e| Error::Config(format!("invalid parameters: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_round_trip() {
        let text = "\
# benchmark tuning
[metric]
p = 0.8
k = 3

[controller]
eta = 1500
momentum = 0.85
deadband = 1e-7
hold_frames = 6
sat_escape_frac = 0.95
dark_escape_mean = 12
ae_target_dn = 120
ae_exponent = 0.6

[scenario]
marker_side_m = 0.12
glare_peak_per_ms = 4.0
glare_sigma_scale = 1.1
texture_contrast = 0.5

[run]
scenario = lowlight
controller = gec
motion = lateral
frames = 250
seed = 11
dt0_ms = 4.5
noise = off
fps = 25
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.controller.metric.p, 0.8);
        assert_eq!(cfg.controller.metric.k, 3.0);
        assert_eq!(cfg.controller.eta, 1500.0);
        assert_eq!(cfg.controller.momentum, 0.85);
        assert_eq!(cfg.controller.hold_frames, 6);
        assert_eq!(cfg.controller.dark_escape_mean, 12.0);
        assert_eq!(cfg.scene.marker_side_m, 0.12);
        assert_eq!(cfg.scene.glare_peak_per_ms, 4.0);
        assert_eq!(cfg.scene.glare_sigma_scale, 1.1);
        assert_eq!(cfg.scene.texture_contrast, 0.5);
        assert_eq!(cfg.run.scenario, Some(ScenarioKind::Lowlight));
        assert_eq!(cfg.run.controller, Some(ControllerKind::Gec));
        assert_eq!(cfg.run.motion, Some(MotionKind::Lateral));
        assert_eq!(cfg.run.frames, Some(250));
        assert_eq!(cfg.run.seed, Some(11));
        assert_eq!(cfg.run.dt0_ms, Some(4.5));
        assert_eq!(cfg.run.noise, Some(false));
        assert_eq!(cfg.run.fps, Some(25.0));
    }

    #[test]
    fn empty_config_keeps_defaults() {
        let cfg = parse_config("\n# nothing here\n").unwrap();
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn unknown_section_is_an_error() {
        let err = parse_config("[camera]\nfps = 30\n").unwrap_err();
        assert!(err.to_string().contains("unknown section"), "{err}");
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn unknown_key_is_an_error_with_line_number() {
        let err = parse_config("[metric]\np = 0.5\nq = 2\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert!(err.to_string().contains("'q'"), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = parse_config("[metric]\np = 0.5\np = 0.6\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn key_outside_section_is_an_error() {
        let err = parse_config("p = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
    }

    #[test]
    fn malformed_number_is_an_error() {
        let err = parse_config("[controller]\neta = fast\n").unwrap_err();
        assert!(err.to_string().contains("expects a number"), "{err}");
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        let err = parse_config("[metric]\np = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("invalid parameters"), "{err}");
        let err = parse_config("[controller]\nmomentum = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("invalid parameters"), "{err}");
        let err = parse_config("[scenario]\ntexture_contrast = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("invalid parameters"), "{err}");
    }

    #[test]
    fn bool_forms_accepted() {
        for (s, v) in [("on", true), ("true", true), ("1", true), ("off", false), ("false", false), ("0", false)] {
            let cfg = parse_config(&format!("[run]\nnoise = {s}\n")).unwrap();
            assert_eq!(cfg.run.noise, Some(v), "{s}");
        }
        assert!(parse_config("[run]\nnoise = maybe\n").is_err());
    }
}
