//! Versioned run reports in JSON or long-format CSV. Floats carry 17
//! significant digits.

use std::io::{self, Write};

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Quantity {
    Scalar(f64),
    Vector(Vec<f64>),
    Count(u64),
    Text(String),
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match self {
            Quantity::Scalar(x) => ser.serialize_f64(*x),
            Quantity::Vector(v) => v.serialize(ser),
            Quantity::Count(n) => ser.serialize_u64(*n),
            Quantity::Text(t) => ser.serialize_str(t),
        }
    }
}

/// Name/value pairs kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fields(pub Vec<(String, Quantity)>);

impl Fields {
    pub fn push(&mut self, name: impl Into<String>, value: Quantity) {
        self.0.push((name.into(), value));
    }

    pub fn scalar(&mut self, name: impl Into<String>, x: f64) {
        self.push(name, Quantity::Scalar(x));
    }

    pub fn vector(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, Quantity::Vector(v.to_vec()));
    }

    pub fn count(&mut self, name: impl Into<String>, n: usize) {
        self.push(name, Quantity::Count(n as u64));
    }

    pub fn text(&mut self, name: impl Into<String>, t: impl Into<String>) {
        self.push(name, Quantity::Text(t.into()));
    }

    pub fn get(&self, name: &str) -> Option<&Quantity> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, q)| q)
    }
}

impl Serialize for Fields {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        let mut map = ser.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Run {
    pub run_id: String,
    pub quantities: Fields,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub status: String,
    pub config: Fields,
    pub runs: Vec<Run>,
}

impl Report {
    pub fn new(command: &str, config: Fields) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            status: "pass".to_string(),
            config,
            runs: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == "pass"
    }

    pub fn set_passed(&mut self, passed: bool) {
        self.status = if passed { "pass" } else { "fail" }.to_string();
    }

    pub fn to_json(&self) -> String {
        to_json_string(self)
    }

    /// Long format: one row per scalar or vector coordinate. Scalars leave
    /// `coordinate` empty.
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["run_id", "quantity", "coordinate", "value"])?;
        for run in &self.runs {
            for (name, q) in &run.quantities.0 {
                match q {
                    Quantity::Scalar(x) => w.write_record([&run.run_id, name, "", &fmt_f64(*x)])?,
                    Quantity::Vector(v) => {
                        for (i, x) in v.iter().enumerate() {
                            w.write_record([&run.run_id, name, &i.to_string(), &fmt_f64(*x)])?;
                        }
                    }
                    Quantity::Count(n) => {
                        w.write_record([&run.run_id, name, "", &n.to_string()])?
                    }
                    Quantity::Text(t) => w.write_record([&run.run_id, name, "", t])?,
                }
            }
        }
        w.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

/// Scientific notation with a 16-digit mantissa fraction. Non-finite values
/// have no JSON form and are written as null.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

struct SigDigits;

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, x: f64) -> io::Result<()> {
        w.write_all(fmt_f64(x).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, x: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(x))
    }
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits);
    value.serialize(&mut ser).expect("report values serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("json output is utf-8")
}
