//! Flat `key=value` run configuration: per-command defaults, an optional
//! config file, and flag overrides, resolved into one canonical text whose
//! SHA-256 tags every output.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use apheat::scenarios::BcCase;
use apheat::schemes::{QBoundary, Variant};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    ConvergeSpace,
    ConvergeTime,
    Island,
    Condition,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ConvergeSpace => "converge-space",
            Command::ConvergeTime => "converge-time",
            Command::Island => "island",
            Command::Condition => "condition",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        match self {
            Command::ConvergeSpace => &["variant", "epsilon", "alpha", "levels", "tau", "steps", "q_boundary"],
            Command::ConvergeTime => {
                &["variant", "epsilon", "alpha", "taus", "grid", "t_final", "measure", "reference_factor", "q_boundary"]
            }
            Command::Island => &[
                "preset",
                "bc",
                "amplitude",
                "omega",
                "epsilon",
                "grid",
                "tau",
                "steps",
                "variant",
                "domain",
                "profile_every",
                "profile_samples",
                "q_boundary",
                "vtk",
            ],
            Command::Condition => &["variant", "epsilon", "grid", "tau", "alpha", "q_boundary"],
        }
    }

    fn defaults(self, preset: Preset) -> Vec<(&'static str, String)> {
        let raw: &[(&str, &str)] = match (self, preset) {
            (Command::ConvergeSpace, _) => &[
                ("variant", "e_aps,rk_aps"),
                ("epsilon", "1"),
                ("alpha", "1"),
                ("levels", "0.1,0.05,0.025,0.0125"),
                ("tau", "1e-6"),
                ("steps", "100"),
                ("q_boundary", "dirichlet"),
            ],
            (Command::ConvergeTime, _) => &[
                ("variant", "e_aps,rk_aps"),
                ("epsilon", "1e-20"),
                ("alpha", "1"),
                ("taus", "0.1,0.05,0.025,0.0125"),
                ("grid", "100"),
                ("t_final", "0.1"),
                ("measure", "temporal"),
                ("reference_factor", "4"),
                ("q_boundary", "dirichlet"),
            ],
            (Command::Island, Preset::Standard) => &[
                ("bc", "dirichlet"),
                ("amplitude", "0.01"),
                ("omega", "0"),
                ("epsilon", "1e-10"),
                ("grid", "200"),
                ("tau", "2.5e-3"),
                ("steps", "100"),
                ("variant", "rk_aps"),
                ("domain", "-0.5,0.5,-0.5,0.5"),
                ("profile_every", "10"),
                ("q_boundary", "dirichlet"),
                ("vtk", "false"),
            ],
            (Command::Island, Preset::FastRotation) => &[
                ("bc", "dirichlet"),
                ("amplitude", "0.000625"),
                ("omega", "1e3"),
                ("epsilon", "1e-3"),
                ("grid", "500"),
                ("tau", "2.5e-7"),
                ("steps", "10000"),
                ("variant", "rk_aps"),
                ("domain", "-0.125,0.125,-0.5,0.5"),
                ("profile_every", "10000"),
                ("q_boundary", "dirichlet"),
                ("vtk", "false"),
            ],
            (Command::Condition, _) => &[
                ("variant", "p,e_aps"),
                ("epsilon", "1,1e-3,1e-6,1e-12,1e-20"),
                ("grid", "10"),
                ("tau", "1e-2"),
                ("alpha", "1"),
                ("q_boundary", "dirichlet"),
            ],
        };
        raw.iter().map(|&(k, v)| (k, v.to_string())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Standard,
    FastRotation,
}

impl FromStr for Preset {
    type Err = UsageError;

    fn from_str(s: &str) -> Result<Self, UsageError> {
        match s {
            "standard" => Ok(Preset::Standard),
            "fast_rotation" => Ok(Preset::FastRotation),
            _ => Err(UsageError(format!("unknown preset '{s}' (standard, fast_rotation)"))),
        }
    }
}

/// A configuration problem the user can fix: exit status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> UsageError {
    UsageError(msg.into())
}

/// Parse `key=value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, UsageError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: expected key=value, got '{line}'", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Fully resolved parameters of one command, in canonical text form.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub command: Command,
    values: BTreeMap<String, String>,
}

impl Resolved {
    /// Layer defaults, then `file` entries, then `flags`, validating every
    /// key and value and normalizing numbers.
    pub fn new(command: Command, file: &[(String, String)], flags: &[(String, String)]) -> Result<Self, UsageError> {
        let mut given: BTreeMap<String, String> = BTreeMap::new();
        for (k, v) in file.iter().chain(flags) {
            if k == "command" {
                if v != command.name() {
                    return Err(usage(format!("config is for '{v}', not '{}'", command.name())));
                }
                continue;
            }
            if !command.keys().contains(&k.as_str()) {
                return Err(usage(format!(
                    "unknown key '{k}' for {} (accepted: {})",
                    command.name(),
                    command.keys().join(", ")
                )));
            }
            given.insert(k.clone(), v.clone());
        }
        let preset = match given.get("preset") {
            Some(p) => p.parse()?,
            None => Preset::Standard,
        };
        let mut values: BTreeMap<String, String> =
            command.defaults(preset).into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        if command == Command::Island {
            values
                .insert("preset".into(), if preset == Preset::Standard { "standard" } else { "fast_rotation" }.into());
        }
        values.extend(given);
        if command == Command::Island && !values.contains_key("profile_samples") {
            let grid: usize = parse_num("grid", &values["grid"])?;
            values.insert("profile_samples".into(), (grid + 1).to_string());
        }
        let mut r = Self { command, values };
        r.normalize()?;
        Ok(r)
    }

    fn normalize(&mut self) -> Result<(), UsageError> {
        let keys: Vec<String> = self.values.keys().cloned().collect();
        for k in keys {
            let v = self.values[&k].clone();
            let canon = match k.as_str() {
                "variant" => list(&v)
                    .map(|s| s.parse::<Variant>().map(|x| x.name().to_string()).map_err(|e| usage(e.to_string())))
                    .collect::<Result<Vec<_>, _>>()?
                    .join(","),
                "epsilon" => list(&v)
                    .map(parse_epsilon)
                    .collect::<Result<Vec<_>, _>>()?
                    .iter()
                    .map(|e| fmt_eps(*e))
                    .collect::<Vec<_>>()
                    .join(","),
                "levels" | "taus" | "domain" => {
                    list(&v).map(|s| parse_num::<f64>(&k, s).map(fmt_f64)).collect::<Result<Vec<_>, _>>()?.join(",")
                }
                "alpha" | "tau" | "t_final" | "amplitude" | "omega" => fmt_f64(parse_num(&k, &v)?),
                "grid" => {
                    let n: usize = parse_num(&k, &v)?;
                    if n == 0 || n % 2 == 1 {
                        return Err(usage(format!(
                            "grid must be a positive even number of intervals (Q2 elements span two), got {n}"
                        )));
                    }
                    n.to_string()
                }
                "steps" | "profile_every" | "profile_samples" | "reference_factor" => {
                    parse_num::<usize>(&k, &v)?.to_string()
                }
                "bc" => v.parse::<BcCase>().map_err(|e| usage(e.to_string()))?.name().to_string(),
                "q_boundary" => v.parse::<QBoundary>().map_err(|e| usage(e.to_string()))?.name().to_string(),
                "measure" => match v.as_str() {
                    "exact" | "temporal" => v.clone(),
                    _ => return Err(usage(format!("measure must be exact or temporal, got '{v}'"))),
                },
                "vtk" => parse_num::<bool>(&k, &v)?.to_string(),
                _ => v.clone(),
            };
            self.values.insert(k, canon);
        }
        if self.command == Command::Island {
            let d = self.f64_list("domain")?;
            if d.len() != 4 {
                return Err(usage("domain takes four numbers: x0,x1,y0,y1"));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unresolved key {key}"))
    }

    pub fn f64(&self, key: &str) -> Result<f64, UsageError> {
        parse_num(key, self.get(key))
    }

    pub fn usize(&self, key: &str) -> Result<usize, UsageError> {
        parse_num(key, self.get(key))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, UsageError> {
        list(self.get(key)).map(|s| parse_num(key, s)).collect()
    }

    pub fn epsilons(&self) -> Result<Vec<f64>, UsageError> {
        list(self.get("epsilon")).map(parse_epsilon).collect()
    }

    pub fn variants(&self) -> Result<Vec<Variant>, UsageError> {
        list(self.get("variant")).map(|s| s.parse().map_err(|e: apheat::Error| usage(e.to_string()))).collect()
    }

    pub fn q_boundary(&self) -> Result<QBoundary, UsageError> {
        self.get("q_boundary").parse().map_err(|e: apheat::Error| usage(e.to_string()))
    }

    /// Canonical file text: the command line, then sorted `key=value`.
    pub fn text(&self) -> String {
        let mut s = format!("command={}\n", self.command.name());
        for (k, v) in &self.values {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }

    pub fn sha256(&self) -> String {
        Sha256::digest(self.text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, UsageError> {
    v.trim().parse().map_err(|_| usage(format!("invalid value '{v}' for {key}")))
}

/// `eps` in `(0, 1]`, or the token `limit` for `eps = 0`.
pub fn parse_epsilon(v: &str) -> Result<f64, UsageError> {
    if v.eq_ignore_ascii_case("limit") {
        return Ok(0.0);
    }
    let e: f64 = parse_num("epsilon", v)?;
    if !(e > 0.0 && e <= 1.0) {
        return Err(usage(format!("epsilon must lie in (0, 1] or be 'limit', got {v}")));
    }
    Ok(e)
}

fn fmt_eps(e: f64) -> String {
    if e == 0.0 {
        "limit".into()
    } else {
        fmt_f64(e)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flags_override_file_and_file_overrides_defaults() {
        let r =
            Resolved::new(Command::Island, &kv(&[("grid", "20"), ("tau", "0.01")]), &kv(&[("grid", "40")])).unwrap();
        assert_eq!(r.get("grid"), "40");
        assert_eq!(r.get("tau"), "1e-2");
        assert_eq!(r.get("epsilon"), "1e-10");
        assert_eq!(r.get("profile_samples"), "41");
    }

    #[test]
    fn equivalent_spellings_hash_identically() {
        let a = Resolved::new(Command::ConvergeSpace, &kv(&[("epsilon", "1e-20"), ("variant", "E_APS")]), &[]).unwrap();
        let b = Resolved::new(
            Command::ConvergeSpace,
            &[],
            &kv(&[("epsilon", "0.00000000000000000001"), ("variant", "e_aps")]),
        )
        .unwrap();
        assert_eq!(a.text(), b.text());
        assert_eq!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn resolved_text_round_trips() {
        let a = Resolved::new(Command::Island, &[], &kv(&[("omega", "10"), ("bc", "neumann")])).unwrap();
        let again = Resolved::new(Command::Island, &parse_config_text(&a.text()).unwrap(), &[]).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn validation_errors() {
        let bad = |c: Command, k: &str, v: &str| Resolved::new(c, &[], &kv(&[(k, v)])).is_err();
        assert!(bad(Command::Island, "grid", "201"));
        assert!(bad(Command::Island, "epsilon", "0"));
        assert!(bad(Command::Island, "epsilon", "1.5"));
        assert!(bad(Command::Island, "levels", "0.1"));
        assert!(bad(Command::ConvergeSpace, "variant", "crank_nicolson"));
        assert!(bad(Command::Island, "domain", "0,1,0"));
        assert!(bad(Command::Island, "preset", "huge"));
        assert!(Resolved::new(Command::Island, &kv(&[("command", "condition")]), &[]).is_err());
        assert!(parse_config_text("grid 20").is_err());
    }

    #[test]
    fn limit_token() {
        assert_eq!(parse_epsilon("limit").unwrap(), 0.0);
        let r = Resolved::new(Command::Condition, &[], &kv(&[("epsilon", "1,limit")])).unwrap();
        assert_eq!(r.get("epsilon"), "1e0,limit");
        assert_eq!(r.epsilons().unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn fast_rotation_preset_defaults() {
        let r = Resolved::new(Command::Island, &kv(&[("preset", "fast_rotation")]), &[]).unwrap();
        assert_eq!(r.get("grid"), "500");
        assert_eq!(r.get("tau"), "2.5e-7");
        assert_eq!(r.get("steps"), "10000");
        assert_eq!(r.f64_list("domain").unwrap(), vec![-0.125, 0.125, -0.5, 0.5]);
    }
}
