//! Spatial cell registry, geohash decoding and great-circle distance.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// IUGG mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

const GEOHASH_ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";
const GEOHASH_MAX_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("empty geohash")]
    EmptyGeohash,
    #[error("geohash `{code}` is longer than {GEOHASH_MAX_LEN} characters")]
    GeohashTooLong { code: String },
    #[error("invalid geohash character `{ch}` at position {pos}")]
    InvalidGeohashChar { ch: char, pos: usize },
    #[error("cell id must be non-empty")]
    EmptyCellId,
    #[error("duplicate cell id `{0}`")]
    DuplicateCell(CellId),
    #[error("coordinates out of range for `{id}`: lat={lat}, lon={lon}")]
    OutOfRange { id: CellId, lat: f64, lon: f64 },
    #[error("cells manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("cells manifest line {line}: {msg}")]
    Manifest { line: u64, msg: String },
}

/// Opaque, case-sensitive spatial cell label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(String);

impl CellId {
    pub fn new(id: impl Into<String>) -> Result<Self, GeoError> {
        let id = id.into();
        if id.is_empty() {
            return Err(GeoError::EmptyCellId);
        }
        Ok(CellId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Latitude/longitude bounding box of a geohash cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeohashBounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl GeohashBounds {
    pub fn centroid(&self) -> LatLon {
        LatLon::new(
            (self.lat_min + self.lat_max) / 2.0,
            (self.lon_min + self.lon_max) / 2.0,
        )
    }

    pub fn contains(&self, p: LatLon) -> bool {
        p.lat >= self.lat_min && p.lat <= self.lat_max && p.lon >= self.lon_min && p.lon <= self.lon_max
    }
}

/// Bounding box of a geohash: bits alternate longitude/latitude, starting with longitude.
pub fn geohash_bounds(code: &str) -> Result<GeohashBounds, GeoError> {
    if code.is_empty() {
        return Err(GeoError::EmptyGeohash);
    }
    if code.chars().count() > GEOHASH_MAX_LEN {
        return Err(GeoError::GeohashTooLong { code: code.to_string() });
    }
    let (mut lat_lo, mut lat_hi) = (-90.0f64, 90.0f64);
    let (mut lon_lo, mut lon_hi) = (-180.0f64, 180.0f64);
    let mut even = true;
    for (pos, ch) in code.chars().enumerate() {
        let idx = u8::try_from(ch)
            .ok()
            .and_then(|b| GEOHASH_ALPHABET.iter().position(|&a| a == b))
            .ok_or(GeoError::InvalidGeohashChar { ch, pos })?;
        for shift in (0..5).rev() {
            let bit = (idx >> shift) & 1 == 1;
            if even {
                let mid = (lon_lo + lon_hi) / 2.0;
                if bit {
                    lon_lo = mid;
                } else {
                    lon_hi = mid;
                }
            } else {
                let mid = (lat_lo + lat_hi) / 2.0;
                if bit {
                    lat_lo = mid;
                } else {
                    lat_hi = mid;
                }
            }
            even = !even;
        }
    }
    Ok(GeohashBounds {
        lat_min: lat_lo,
        lat_max: lat_hi,
        lon_min: lon_lo,
        lon_max: lon_hi,
    })
}

/// Centroid of a geohash cell.
pub fn decode_geohash(code: &str) -> Result<LatLon, GeoError> {
    geohash_bounds(code).map(|b| b.centroid())
}

/// Great-circle distance on a sphere of radius [`EARTH_RADIUS_KM`].
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let dlat = (a.lat - b.lat).abs().to_radians();
    let dlon = (a.lon - b.lon).abs().to_radians();
    let (la, lb) = (a.lat.to_radians(), b.lat.to_radians());
    // IEEE multiplication commutes, so this is symmetric in (a, b) bit for bit.
    let cos_prod = la.cos() * lb.cos();
    let h = (dlat / 2.0).sin().powi(2) + cos_prod * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Immutable-after-construction registry of cell centroids.
#[derive(Debug, Clone, Default)]
pub struct CellTable {
    entries: BTreeMap<CellId, LatLon>,
}

impl CellTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: CellId, at: LatLon) -> Result<(), GeoError> {
        if !at.is_valid() {
            return Err(GeoError::OutOfRange { id, lat: at.lat, lon: at.lon });
        }
        if self.entries.contains_key(&id) {
            return Err(GeoError::DuplicateCell(id));
        }
        self.entries.insert(id, at);
        Ok(())
    }

    pub fn get(&self, id: &CellId) -> Option<LatLon> {
        self.entries.get(id).copied()
    }

    pub fn contains(&self, id: &CellId) -> bool {
        self.entries.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellId, LatLon)> {
        self.entries.iter().map(|(k, v)| (k, *v))
    }

    /// Distance between two registered cells, `None` if either is unknown.
    pub fn distance_km(&self, a: &CellId, b: &CellId) -> Option<f64> {
        Some(haversine_km(self.get(a)?, self.get(b)?))
    }

    /// Reads a `cell_id,lat,lon` manifest.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, GeoError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| GeoError::Manifest {
                line: 1,
                msg: format!("missing column `{name}`"),
            })
        };
        let (ci, clat, clon) = (col("cell_id")?, col("lat")?, col("lon")?);
        let mut table = CellTable::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| rec.get(i).unwrap_or("");
            let num = |i: usize| {
                field(i).parse::<f64>().map_err(|e| GeoError::Manifest {
                    line,
                    msg: format!("bad coordinate `{}`: {e}", field(i)),
                })
            };
            let id = CellId::new(field(ci))?;
            table.insert(id, LatLon::new(num(clat)?, num(clon)?))?;
        }
        Ok(table)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), GeoError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cell_id", "lat", "lon"])?;
        for (id, p) in &self.entries {
            w.write_record([id.as_str(), &p.lat.to_string(), &p.lon.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geohash_origin_cell() {
        let p = decode_geohash("s00000000000").unwrap();
        assert!(p.lat.abs() < 1e-4 && p.lon.abs() < 1e-4, "{p:?}");
    }

    #[test]
    fn geohash_mexico_city() {
        let p = decode_geohash("9g3w6").unwrap();
        assert!((19.0..=20.0).contains(&p.lat), "{p:?}");
        assert!((-100.0..=-98.0).contains(&p.lon), "{p:?}");
    }

    #[test]
    fn geohash_errors() {
        assert!(matches!(decode_geohash(""), Err(GeoError::EmptyGeohash)));
        match decode_geohash("9ga3") {
            Err(GeoError::InvalidGeohashChar { ch, pos }) => assert_eq!((ch, pos), ('a', 2)),
            other => panic!("{other:?}"),
        }
        assert!(decode_geohash("0123456789bcd").is_err());
    }

    #[test]
    fn haversine_examples() {
        let o = LatLon::new(0.0, 0.0);
        assert_eq!(haversine_km(o, o), 0.0);
        assert!((haversine_km(o, LatLon::new(0.0, 1.0)) - 111.195).abs() < 0.01);
        let half = std::f64::consts::PI * EARTH_RADIUS_KM;
        let d = haversine_km(o, LatLon::new(0.0, 180.0));
        assert!((d - 20015.1).abs() < 0.5 && (d - half).abs() < 1e-6);
    }

    #[test]
    fn table_rejects_bad_entries() {
        let mut t = CellTable::new();
        let a = CellId::new("a").unwrap();
        t.insert(a.clone(), LatLon::new(1.0, 2.0)).unwrap();
        assert!(matches!(t.insert(a, LatLon::new(0.0, 0.0)), Err(GeoError::DuplicateCell(_))));
        let b = CellId::new("b").unwrap();
        assert!(t.insert(b, LatLon::new(91.0, 0.0)).is_err());
        assert!(CellId::new("").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let src = "cell_id,lat,lon\n9g3w6,19.4,-99.1\nx,-1.5,3.25\n";
        let t = CellTable::read_csv(src.as_bytes()).unwrap();
        assert_eq!(t.len(), 2);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        let t2 = CellTable::read_csv(out.as_slice()).unwrap();
        assert_eq!(
            t.iter().collect::<Vec<_>>(),
            t2.iter().collect::<Vec<_>>()
        );
        assert!(CellTable::read_csv("cell_id,lat\na,1\n".as_bytes()).is_err());
    }
}
