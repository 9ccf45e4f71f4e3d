use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ENV_PREFIX: &str = "INDOORNAV_ENDPOINT_";

/// Topics that leave the process.
pub const NETWORK_TOPICS: [&str; 4] = ["camera", "detections", "sensors", "combined"];

pub const DEFAULT_PORTS: [(&str, u16); 4] = [
    ("camera", 5556),
    ("detections", 5555),
    ("sensors", 5557),
    ("combined", 5558),
];

/// Endpoint overrides; anything left out keeps its default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub host: Option<String>,
    pub camera: Option<u16>,
    pub detections: Option<u16>,
    pub sensors: Option<u16>,
    pub combined: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub host: String,
    pub port: u16,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "tcp://{}:{}", self.host, self.port)
    }
}

impl Endpoint {
    pub fn socket_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}

impl EndpointConfig {
    fn port(&self, topic: &str) -> Option<u16> {
        match topic {
            "camera" => self.camera,
            "detections" => self.detections,
            "sensors" => self.sensors,
            "combined" => self.combined,
            _ => None,
        }
    }

    fn set_port(&mut self, topic: &str, port: u16) -> bool {
        let slot = match topic {
            "camera" => &mut self.camera,
            "detections" => &mut self.detections,
            "sensors" => &mut self.sensors,
            "combined" => &mut self.combined,
            _ => return false,
        };
        *slot = Some(port);
        true
    }

    /// Applies `INDOORNAV_ENDPOINT_<TOPIC>=<port>` and
    /// `INDOORNAV_ENDPOINT_HOST=<host>` from `vars`.
    pub fn with_env<I, K, V>(mut self, vars: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let Some(name) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let name = name.to_ascii_lowercase();
            let v = v.as_ref();
            if name == "host" {
                self.host = Some(v.to_owned());
                continue;
            }
            let port: u16 = v
                .parse()
                .map_err(|_| Error::Config(format!("{}{}: bad port '{v}'", ENV_PREFIX, name.to_uppercase())))?;
            if !self.set_port(&name, port) {
                return Err(Error::Config(format!(
                    "{ENV_PREFIX}{}: unknown topic",
                    name.to_uppercase()
                )));
            }
        }
        Ok(self)
    }

    /// Overrides from the process environment.
    pub fn with_process_env(self) -> Result<Self> {
        self.with_env(std::env::vars())
    }

    pub fn resolve(&self) -> Result<BTreeMap<String, Endpoint>> {
        let host = self.host.clone().unwrap_or_else(|| "localhost".into());
        let mut out = BTreeMap::new();
        let mut used: BTreeMap<u16, &str> = BTreeMap::new();
        for (topic, default) in DEFAULT_PORTS {
            let port = self.port(topic).unwrap_or(default);
            if port == 0 {
                return Err(Error::Config(format!("{topic}: port 0 is not allowed")));
            }
            if let Some(other) = used.insert(port, topic) {
                return Err(Error::Config(format!(
                    "topics '{other}' and '{topic}' share port {port}"
                )));
            }
            out.insert(
                topic.to_owned(),
                Endpoint {
                    host: host.clone(),
                    port,
                },
            );
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let m = EndpointConfig::default().resolve().unwrap();
        assert_eq!(m["camera"].to_string(), "tcp://localhost:5556");
        assert_eq!(m["detections"].port, 5555);
        assert_eq!(m["sensors"].port, 5557);
        assert_eq!(m["combined"].port, 5558);
    }

    #[test]
    fn overrides_and_duplicates() {
        let cfg = EndpointConfig {
            camera: Some(6000),
            ..Default::default()
        };
        assert_eq!(cfg.resolve().unwrap()["camera"].port, 6000);
        let dup = EndpointConfig {
            sensors: Some(5555),
            ..Default::default()
        };
        assert!(matches!(dup.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn environment_overrides() {
        let cfg = EndpointConfig::default()
            .with_env([
                ("INDOORNAV_ENDPOINT_COMBINED", "7001"),
                ("INDOORNAV_ENDPOINT_HOST", "10.0.0.2"),
                ("PATH", "/bin"),
            ])
            .unwrap();
        let m = cfg.resolve().unwrap();
        assert_eq!(m["combined"].to_string(), "tcp://10.0.0.2:7001");
        assert!(EndpointConfig::default()
            .with_env([("INDOORNAV_ENDPOINT_RADAR", "1")])
            .is_err());
        assert!(EndpointConfig::default()
            .with_env([("INDOORNAV_ENDPOINT_CAMERA", "x")])
            .is_err());
    }
}
