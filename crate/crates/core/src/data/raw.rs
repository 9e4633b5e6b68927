//! Line-oriented accelerometer text: `user,activity,timestamp,x,y,z;`.

use std::collections::BTreeSet;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub user_id: u32,
    pub activity: String,
    pub timestamp: i64,
    pub accel: [f64; 3],
}

/// Number of comma-separated fields per line and the position of each
/// field we read. Text form: `fields:user,activity,timestamp,x,y,z`,
/// e.g. `6:0,1,2,3,4,5`. The alias `wisdm` is the 6-field layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub field_count: usize,
    pub user: usize,
    pub activity: usize,
    pub timestamp: usize,
    pub axes: [usize; 3],
}

impl Default for Schema {
    fn default() -> Self {
        Self::wisdm()
    }
}

impl Schema {
    pub fn wisdm() -> Self {
        Self {
            field_count: 6,
            user: 0,
            activity: 1,
            timestamp: 2,
            axes: [3, 4, 5],
        }
    }

    fn indices(&self) -> [usize; 6] {
        [
            self.user,
            self.activity,
            self.timestamp,
            self.axes[0],
            self.axes[1],
            self.axes[2],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let idx = self.indices();
        if let Some(bad) = idx.iter().find(|&&i| i >= self.field_count) {
            return Err(Error::Config(format!(
                "schema index {bad} outside a {}-field line",
                self.field_count
            )));
        }
        if idx.iter().collect::<BTreeSet<_>>().len() != idx.len() {
            return Err(Error::Config(format!("schema {self} maps two columns to one field")));
        }
        Ok(())
    }

    /// Parses one line. `None` means the line is rejected.
    pub fn parse_line(&self, line: &str) -> Option<RawRecord> {
        let body = line.trim_end().strip_suffix(';')?;
        let fields: Vec<&str> = body.split(',').collect();
        if fields.len() != self.field_count {
            return None;
        }
        let activity = fields[self.activity].trim();
        if activity.is_empty() {
            return None;
        }
        let num = |i: usize| fields[i].trim().parse::<f64>().ok().filter(|v| v.is_finite());
        Some(RawRecord {
            user_id: fields[self.user].trim().parse().ok()?,
            activity: activity.to_string(),
            timestamp: fields[self.timestamp].trim().parse().ok()?,
            accel: [num(self.axes[0])?, num(self.axes[1])?, num(self.axes[2])?],
        })
    }

    /// Inverse of [`Schema::parse_line`]; unmapped fields are left empty.
    pub fn format_line(&self, r: &RawRecord) -> String {
        let mut fields = vec![String::new(); self.field_count];
        fields[self.user] = r.user_id.to_string();
        fields[self.activity] = r.activity.clone();
        fields[self.timestamp] = r.timestamp.to_string();
        for (a, &i) in self.axes.iter().enumerate() {
            fields[i] = r.accel[a].to_string();
        }
        let mut line = fields.join(",");
        line.push(';');
        line
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [u, a, t, x, y, z] = self.indices();
        write!(f, "{}:{u},{a},{t},{x},{y},{z}", self.field_count)
    }
}

impl FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("wisdm") {
            return Ok(Self::wisdm());
        }
        let bad = || Error::Config(format!("schema `{s}` is not of the form fields:u,a,t,x,y,z"));
        let (count, rest) = s.split_once(':').ok_or_else(bad)?;
        let idx: Vec<usize> = rest
            .split(',')
            .map(|v| v.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad())?;
        let [u, a, t, x, y, z] = idx[..] else {
            return Err(bad());
        };
        let schema = Self {
            field_count: count.trim().parse().map_err(|_| bad())?,
            user: u,
            activity: a,
            timestamp: t,
            axes: [x, y, z],
        };
        schema.validate()?;
        Ok(schema)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParseReport {
    pub records: Vec<RawRecord>,
    pub rejected: usize,
}

/// Reads every line, keeping the ones that parse under `schema`. Malformed
/// lines (including invalid UTF-8) are counted, never fatal.
pub fn parse_raw<R: BufRead>(mut reader: R, schema: &Schema) -> Result<ParseReport> {
    schema.validate()?;
    let mut report = ParseReport::default();
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let Ok(line) = std::str::from_utf8(&buf) else {
            report.rejected += 1;
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        match schema.parse_line(line) {
            Some(r) => report.records.push(r),
            None => report.rejected += 1,
        }
    }
    if report.records.is_empty() {
        return Err(Error::Data(format!(
            "no usable records ({} lines rejected)",
            report.rejected
        )));
    }
    Ok(report)
}

/// Keeps records whose activity is in `whitelist`; returns how many were dropped.
pub fn retain_activities(records: &mut Vec<RawRecord>, whitelist: &[String]) -> usize {
    let before = records.len();
    records.retain(|r| whitelist.iter().any(|w| w == &r.activity));
    before - records.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LINE: &str = "33,Jogging,49105962326000,-0.69,12.68,0.50;";

    #[test]
    fn classic_line() {
        let rep = parse_raw(LINE.as_bytes(), &Schema::wisdm()).unwrap();
        assert_eq!(rep.rejected, 0);
        assert_eq!(
            rep.records,
            vec![RawRecord {
                user_id: 33,
                activity: "Jogging".into(),
                timestamp: 49105962326000,
                accel: [-0.69, 12.68, 0.50],
            }]
        );
    }

    #[test]
    fn rejects_are_counted() {
        let text = format!(
            "{LINE}\n{}\n33,Jogging,1,2,3;\n  \n33,,1,2,3,4;\n{LINE}  \r\n",
            &LINE[..LINE.len() - 1]
        );
        let rep = parse_raw(text.as_bytes(), &Schema::wisdm()).unwrap();
        assert_eq!(rep.records.len(), 2);
        assert_eq!(rep.rejected, 3);
    }

    #[test]
    fn missing_semicolon_only_line_is_an_empty_dataset() {
        let err = parse_raw(&LINE.as_bytes()[..LINE.len() - 1], &Schema::wisdm()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn invalid_utf8_is_a_reject() {
        let mut bytes = LINE.as_bytes().to_vec();
        bytes.extend_from_slice(b"\n\xff\xfe;\n");
        let rep = parse_raw(&bytes[..], &Schema::wisdm()).unwrap();
        assert_eq!((rep.records.len(), rep.rejected), (1, 1));
    }

    #[test]
    fn wide_schema_reads_mapped_columns() {
        let schema: Schema = "18:0,1,2,3,4,5".parse().unwrap();
        let line = "7,Walking,100,1.5,2.5,3.5,a,b,c,d,e,f,g,h,i,j,k,l;";
        let r = schema.parse_line(line).unwrap();
        assert_eq!((r.user_id, r.accel), (7, [1.5, 2.5, 3.5]));
        assert!(Schema::wisdm().parse_line(line).is_none());
        assert_eq!(schema.to_string().parse::<Schema>().unwrap(), schema);
    }

    #[test]
    fn bad_schemas() {
        assert!("6:0,1,2,3,4,6".parse::<Schema>().is_err());
        assert!("6:0,1,2,3,4,4".parse::<Schema>().is_err());
        assert!("6:0,1,2".parse::<Schema>().is_err());
        assert_eq!("wisdm".parse::<Schema>().unwrap(), Schema::wisdm());
    }

    #[test]
    fn whitelist_filter() {
        let mut rs = parse_raw(format!("{LINE}\n1,Typing,1,0,0,0;").as_bytes(), &Schema::wisdm())
            .unwrap()
            .records;
        assert_eq!(retain_activities(&mut rs, &["Jogging".into()]), 1);
        assert_eq!(rs.len(), 1);
    }

    proptest! {
        #[test]
        fn parse_format_parse_is_fixed_point(
            user in 0u32..100,
            label in "[A-Za-z][A-Za-z ]{0,10}[A-Za-z]",
            ts in any::<i64>(),
            accel in proptest::array::uniform3(-100.0f64..100.0),
            wide in any::<bool>(),
        ) {
            let schema = if wide { "18:4,0,17,2,9,11".parse().unwrap() } else { Schema::wisdm() };
            let r = RawRecord { user_id: user, activity: label, timestamp: ts, accel };
            let line = schema.format_line(&r);
            let once = schema.parse_line(&line).unwrap();
            prop_assert_eq!(&once, &r);
            prop_assert_eq!(schema.format_line(&once), line);
        }
    }
}
