use std::path::Path;

use crate::error::{Error, Result};

/// Column layout and rating scale of an input ratings file.
///
/// Written as flat `key=value` lines, e.g.
///
/// ```text
/// delimiter=tab
/// user_col=0
/// item_col=1
/// rating_col=2
/// scale_min=1
/// scale_max=5
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Schema {
    pub delimiter: String,
    pub user_col: usize,
    pub item_col: usize,
    pub rating_col: usize,
    pub timestamp_col: Option<usize>,
    pub scale_min: u32,
    pub scale_max: u32,
    /// Map a wide scale onto this many buckets before splitting.
    pub buckets: Option<u32>,
    pub skip_header: bool,
}

impl Default for Schema {
    fn default() -> Self {
        Schema::ml_100k()
    }
}

impl Schema {
    /// `user item rating timestamp`, tab separated, ratings 1..=5.
    pub fn ml_100k() -> Self {
        Schema {
            delimiter: "\t".into(),
            user_col: 0,
            item_col: 1,
            rating_col: 2,
            timestamp_col: Some(3),
            scale_min: 1,
            scale_max: 5,
            buckets: None,
            skip_header: false,
        }
    }

    /// `user::item::rating::timestamp`.
    pub fn ml_1m() -> Self {
        Schema {
            delimiter: "::".into(),
            ..Schema::ml_100k()
        }
    }

    /// Tab separated, ratings 1..=100 folded into 10 buckets.
    pub fn yahoo_music() -> Self {
        Schema {
            scale_max: 100,
            buckets: Some(10),
            timestamp_col: None,
            ..Schema::ml_100k()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "ml-100k" => Some(Schema::ml_100k()),
            "ml-1m" => Some(Schema::ml_1m()),
            "yahoo-music" => Some(Schema::yahoo_music()),
            _ => None,
        }
    }

    /// A preset name, a path to a descriptor file, or inline descriptor text.
    pub fn resolve(descriptor: &str) -> Result<Self> {
        if let Some(s) = Schema::preset(descriptor) {
            return Ok(s);
        }
        let path = Path::new(descriptor);
        if path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(format!("reading schema {}", path.display()), e))?;
            return Schema::parse(&text);
        }
        if descriptor.contains('=') {
            return Schema::parse(&descriptor.replace(';', "\n"));
        }
        Err(Error::Config(format!(
            "schema `{descriptor}` is neither a preset (ml-100k, ml-1m, yahoo-music), a file, nor key=value text"
        )))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Schema::ml_100k();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("schema line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::Config(format!("schema key `{key}`: {what} `{value}`"));
            let int = || value.parse::<usize>().map_err(|_| bad("not a count"));
            match key {
                "delimiter" => {
                    s.delimiter = match value {
                        "tab" | "\\t" => "\t".into(),
                        "comma" => ",".into(),
                        "space" => " ".into(),
                        other if !other.is_empty() => other.into(),
                        _ => return Err(bad("empty delimiter")),
                    }
                }
                "user_col" => s.user_col = int()?,
                "item_col" => s.item_col = int()?,
                "rating_col" => s.rating_col = int()?,
                "timestamp_col" => {
                    s.timestamp_col = if value == "none" { None } else { Some(int()?) }
                }
                "scale_min" => s.scale_min = value.parse().map_err(|_| bad("not a rating"))?,
                "scale_max" => s.scale_max = value.parse().map_err(|_| bad("not a rating"))?,
                "buckets" => {
                    s.buckets = if value == "none" {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad("not a count"))?)
                    }
                }
                "skip_header" => {
                    s.skip_header = value.parse().map_err(|_| bad("not a boolean"))?
                }
                _ => return Err(Error::Config(format!("unknown schema key `{key}`"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale_min == 0 || self.scale_min > self.scale_max {
            return Err(Error::Config(format!(
                "rating scale {}..={} is empty or starts at 0",
                self.scale_min, self.scale_max
            )));
        }
        if let Some(b) = self.buckets {
            if b == 0 || b >= self.scale_max {
                return Err(Error::Config(format!(
                    "cannot bucket a 1..={} scale into {b} buckets",
                    self.scale_max
                )));
            }
        }
        Ok(())
    }

    /// Rating categories after optional bucketing.
    pub fn categories(&self) -> Vec<u32> {
        match self.buckets {
            Some(b) => (1..=b).collect(),
            None => (self.scale_min..=self.scale_max).collect(),
        }
    }
}
