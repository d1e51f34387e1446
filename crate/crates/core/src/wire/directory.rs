//! Directory of telemetry servers, looked up by client location.
//!
//! Registry file:
//!
//! ```toml
//! [[server]]
//! name = "campus-north"
//! host = "10.0.0.2"
//! port = 7000
//! latitude = 42.3601
//! longitude = -71.0942
//! ```
//!
//! Requests and responses travel as one JSON object per line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WireError;

pub const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegistryEntry {
    #[serde(default)]
    pub name: String,
    pub host: String,
    pub port: u16,
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    #[serde(rename = "server", default)]
    pub servers: Vec<RegistryEntry>,
}

impl Registry {
    pub fn from_toml(text: &str) -> Result<Self, WireError> {
        let reg: Self = toml::from_str(text).map_err(|e| WireError::Registry(e.to_string()))?;
        for s in &reg.servers {
            check_coordinates(s.latitude, s.longitude)?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, WireError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectoryRequest {
    pub latitude: f64,
    pub longitude: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ServerAddr {
    pub host: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DirectoryResponse {
    pub servers: Vec<ServerAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn check_coordinates(latitude: f64, longitude: f64) -> Result<(), WireError> {
    if (-90.0..=90.0).contains(&latitude) && (-180.0..=180.0).contains(&longitude) {
        Ok(())
    } else {
        Err(WireError::InvalidCoordinates { latitude, longitude })
    }
}

/// Great-circle distance in kilometres.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

/// Servers ordered nearest first; ties keep registry order.
pub fn directory_lookup(registry: &Registry, req: &DirectoryRequest) -> Result<DirectoryResponse, WireError> {
    check_coordinates(req.latitude, req.longitude)?;
    let mut ranked: Vec<(f64, &RegistryEntry)> = registry
        .servers
        .iter()
        .map(|s| (haversine_km(req.latitude, req.longitude, s.latitude, s.longitude), s))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(DirectoryResponse {
        servers: ranked.into_iter().map(|(_, s)| ServerAddr { host: s.host.clone(), port: s.port }).collect(),
        error: None,
    })
}

/// Answers one request line.
pub fn answer_line(registry: &Registry, line: &str) -> String {
    let resp = match serde_json::from_str::<DirectoryRequest>(line) {
        Ok(req) => directory_lookup(registry, &req).unwrap_or_else(|e| DirectoryResponse { servers: vec![], error: Some(e.to_string()) }),
        Err(e) => DirectoryResponse { servers: vec![], error: Some(format!("bad request: {e}")) },
    };
    serde_json::to_string(&resp).expect("response serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(name: &str, lat: f64, lon: f64) -> RegistryEntry {
        RegistryEntry { name: name.into(), host: format!("{name}.example"), port: 7000, latitude: lat, longitude: lon }
    }

    // Independent spherical law of cosines; agrees with haversine away from tiny distances.
    fn cosine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
        let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
        let c = p1.sin() * p2.sin() + p1.cos() * p2.cos() * (lon2 - lon1).to_radians().cos();
        EARTH_RADIUS_KM * c.clamp(-1.0, 1.0).acos()
    }

    #[test]
    fn known_distance() {
        // Boston to New York, roughly 306 km
        let d = haversine_km(42.3601, -71.0589, 40.7128, -74.0060);
        assert!((d - 306.1).abs() < 1.0, "{d}");
        assert!((d - cosine_km(42.3601, -71.0589, 40.7128, -74.0060)).abs() < 1e-6);
        assert_eq!(haversine_km(10.0, 20.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn ordering() {
        let reg = Registry { servers: vec![entry("far", 0.0, 3.0), entry("near", 0.0, 1.0), entry("mid", 0.0, 2.0)] };
        let r = directory_lookup(&reg, &DirectoryRequest { latitude: 0.0, longitude: 0.0 }).unwrap();
        let hosts: Vec<_> = r.servers.iter().map(|s| s.host.as_str()).collect();
        assert_eq!(hosts, ["near.example", "mid.example", "far.example"]);
        let r = directory_lookup(&reg, &DirectoryRequest { latitude: 0.0, longitude: 3.0 }).unwrap();
        assert_eq!(r.servers[0].host, "far.example");
        let empty = directory_lookup(&Registry::default(), &DirectoryRequest { latitude: 1.0, longitude: 1.0 }).unwrap();
        assert!(empty.servers.is_empty());
        assert!(matches!(
            directory_lookup(&reg, &DirectoryRequest { latitude: 91.0, longitude: 0.0 }),
            Err(WireError::InvalidCoordinates { .. })
        ));
    }

    #[test]
    fn matches_oracle_order() {
        let reg = Registry {
            servers: vec![entry("a", 42.36, -71.09), entry("b", 40.71, -74.00), entry("c", 41.82, -71.41), entry("d", 43.66, -70.26)],
        };
        let (lat, lon) = (42.0, -71.5);
        let mut expect: Vec<_> = reg.servers.iter().map(|s| (cosine_km(lat, lon, s.latitude, s.longitude), s.host.clone())).collect();
        expect.sort_by(|a, b| a.0.total_cmp(&b.0));
        let got = directory_lookup(&reg, &DirectoryRequest { latitude: lat, longitude: lon }).unwrap();
        assert_eq!(got.servers.iter().map(|s| s.host.clone()).collect::<Vec<_>>(), expect.into_iter().map(|e| e.1).collect::<Vec<_>>());
    }

    #[test]
    fn registry_file_and_lines() {
        let reg = Registry::from_toml(
            "[[server]]\nname = \"n\"\nhost = \"10.0.0.2\"\nport = 7000\nlatitude = 42.36\nlongitude = -71.09\n",
        )
        .unwrap();
        assert_eq!(reg.servers.len(), 1);
        assert!(Registry::from_toml("[[server]]\nhost = \"h\"\nport = 1\nlatitude = 100.0\nlongitude = 0.0\n").is_err());
        assert_eq!(answer_line(&reg, r#"{"latitude":42.0,"longitude":-71.0}"#), r#"{"servers":[{"host":"10.0.0.2","port":7000}]}"#);
        assert!(answer_line(&reg, "nonsense").contains("\"error\""));
        assert!(answer_line(&reg, r#"{"latitude":0.0,"longitude":500.0}"#).contains("out of range"));
    }
}
