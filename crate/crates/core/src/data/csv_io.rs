use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use super::{ChoiceDataset, ChoiceSituation, PersonRecord, Schema, StandardizationRecord};
use crate::error::{Error, Result};
use crate::kv::KvDoc;

/// Identifier ordering: integers numerically, then everything else
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
struct IdKey(Option<i64>, String);

impl IdKey {
    fn new(raw: &str) -> Self {
        IdKey(raw.parse().ok(), raw.to_string())
    }
}

impl Ord for IdKey {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.0, other.0) {
            (Some(a), Some(b)) => a.cmp(&b).then_with(|| self.1.cmp(&other.1)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.1.cmp(&other.1),
        }
    }
}

impl PartialOrd for IdKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Row {
    alt: String,
    chosen: bool,
    available: bool,
    attrs: Vec<f64>,
}

struct PersonAcc {
    id: String,
    cont: Vec<f64>,
    bin: Vec<bool>,
    sit_order: Vec<String>,
    sits: HashMap<String, Vec<Row>>,
}

fn parse_binary(column: &str, row: usize, value: &str) -> Result<bool> {
    match value.parse::<f64>() {
        Ok(v) if v == 0.0 => Ok(false),
        Ok(v) if v == 1.0 => Ok(true),
        _ => Err(Error::NonBinary {
            column: column.to_string(),
            row,
            value: value.to_string(),
        }),
    }
}

fn parse_number(column: &str, row: usize, value: &str) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::BadNumber {
        column: column.to_string(),
        row,
        value: value.to_string(),
    })
}

fn map_csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths {
            pos,
            expected_len,
            len,
        } => Error::Ragged(format!(
            "record at line {} has {len} fields, header has {expected_len}",
            pos.as_ref().map_or(0, |p| p.line())
        )),
        _ => Error::Csv(e),
    }
}

/// Read a long-format CSV into a panel dataset. Persons are ordered by id,
/// situations by first appearance, alternatives by id.
pub fn load_dataset(path: &Path, schema: &Schema) -> Result<ChoiceDataset> {
    load_impl(path, schema, None)
}

/// Like [`load_dataset`] but with a fixed alternative universe, so a holdout
/// file lines up with the training alternatives even if some never appear.
pub fn load_dataset_aligned(
    path: &Path,
    schema: &Schema,
    alt_ids: &[String],
) -> Result<ChoiceDataset> {
    load_impl(path, schema, Some(alt_ids))
}

fn load_impl(path: &Path, schema: &Schema, alt_universe: Option<&[String]>) -> Result<ChoiceDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers().map_err(map_csv_error)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let person_col = col(&schema.person)?;
    let sit_col = col(&schema.situation)?;
    let alt_col = col(&schema.alternative)?;
    let chosen_col = col(&schema.chosen)?;
    let avail_col = schema.available.as_deref().map(col).transpose()?;
    let attrs: Vec<_> = schema.active_attributes().collect();
    let attr_cols = attrs
        .iter()
        .map(|a| a.column.as_deref().map(col).transpose())
        .collect::<Result<Vec<_>>>()?;
    let cont_cols = schema
        .continuous
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let bin_cols = schema
        .binary
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut persons: BTreeMap<IdKey, PersonAcc> = BTreeMap::new();
    let mut alt_seen: BTreeMap<IdKey, String> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(map_csv_error)?;
        let line = i + 2;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let pid = field(person_col).to_string();
        let sid = field(sit_col).to_string();
        let alt = field(alt_col).to_string();
        let chosen = parse_binary(&schema.chosen, line, field(chosen_col))?;
        let available = match (avail_col, &schema.available) {
            (Some(c), Some(name)) => parse_binary(name, line, field(c))?,
            _ => true,
        };
        let attr_vals = attrs
            .iter()
            .zip(&attr_cols)
            .map(|(a, c)| match c {
                Some(c) => parse_number(a.column.as_deref().unwrap_or(""), line, field(*c)),
                None => Ok(1.0),
            })
            .collect::<Result<Vec<_>>>()?;
        let cont = schema
            .continuous
            .iter()
            .zip(&cont_cols)
            .map(|(name, &c)| parse_number(name, line, field(c)))
            .collect::<Result<Vec<_>>>()?;
        let bin = schema
            .binary
            .iter()
            .zip(&bin_cols)
            .map(|(name, &c)| parse_binary(name, line, field(c)))
            .collect::<Result<Vec<_>>>()?;

        alt_seen.entry(IdKey::new(&alt)).or_insert_with(|| alt.clone());
        let acc = persons.entry(IdKey::new(&pid)).or_insert_with(|| PersonAcc {
            id: pid.clone(),
            cont: cont.clone(),
            bin: bin.clone(),
            sit_order: Vec::new(),
            sits: HashMap::new(),
        });
        if acc.cont != cont || acc.bin != bin {
            return Err(Error::InvalidData(format!(
                "person {pid}: characteristics differ between rows (line {line})"
            )));
        }
        let rows = acc.sits.entry(sid.clone()).or_insert_with(|| {
            acc.sit_order.push(sid.clone());
            Vec::new()
        });
        rows.push(Row {
            alt,
            chosen,
            available,
            attrs: attr_vals,
        });
    }

    let alt_ids: Vec<String> = match alt_universe {
        Some(ids) => {
            for alt in alt_seen.values() {
                if !ids.contains(alt) {
                    return Err(Error::SchemaMismatch(format!(
                        "alternative `{alt}` not among {ids:?}"
                    )));
                }
            }
            ids.to_vec()
        }
        None => alt_seen.into_values().collect(),
    };
    let alt_index: HashMap<&str, usize> = alt_ids
        .iter()
        .enumerate()
        .map(|(j, a)| (a.as_str(), j))
        .collect();
    let j_count = alt_ids.len();
    let p_count = attrs.len();

    let mut people = Vec::with_capacity(persons.len());
    for acc in persons.into_values() {
        let mut situations = Vec::with_capacity(acc.sit_order.len());
        for sid in &acc.sit_order {
            let rows = &acc.sits[sid];
            let mut x = vec![0.0; j_count * p_count];
            let mut available = vec![false; j_count];
            let mut present = vec![false; j_count];
            let mut chosen = None;
            for row in rows {
                let j = alt_index[row.alt.as_str()];
                if present[j] {
                    return Err(Error::InvalidData(format!(
                        "person {}, situation {sid}: alternative `{}` listed twice",
                        acc.id, row.alt
                    )));
                }
                present[j] = true;
                available[j] = row.available;
                for (p, (spec, v)) in attrs.iter().zip(&row.attrs).enumerate() {
                    if spec.applies_to(&row.alt) {
                        x[j * p_count + p] = *v;
                    }
                }
                if row.chosen {
                    if chosen.is_some() {
                        return Err(Error::InvalidData(format!(
                            "person {}, situation {sid}: more than one chosen alternative",
                            acc.id
                        )));
                    }
                    chosen = Some(j);
                }
            }
            let chosen = chosen.ok_or_else(|| {
                Error::InvalidData(format!(
                    "person {}, situation {sid}: no chosen alternative",
                    acc.id
                ))
            })?;
            if !available[chosen] {
                return Err(Error::ChosenUnavailable {
                    person: acc.id.clone(),
                    situation: sid.clone(),
                });
            }
            let sit = ChoiceSituation::new(x, available, chosen).map_err(|e| match e {
                Error::InvalidData(msg) => {
                    Error::InvalidData(format!("person {}, situation {sid}: {msg}", acc.id))
                }
                other => other,
            })?;
            situations.push(sit);
        }
        people.push(PersonRecord {
            id: acc.id,
            s_cont: acc.cont,
            s_bin: acc.bin,
            situations,
        });
    }
    if people.is_empty() {
        return Err(Error::InvalidData(format!("{} has no data rows", path.display())));
    }
    ChoiceDataset::new(
        people,
        alt_ids,
        attrs.iter().map(|a| a.name.clone()).collect(),
        schema.continuous.clone(),
        schema.binary.clone(),
    )
}

/// Sidecar metadata written next to a canonical dataset dump.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub persons: usize,
    pub situations: usize,
    pub alt_count: usize,
    pub attr_count: usize,
    pub cont_count: usize,
    pub bin_count: usize,
    pub schema: Schema,
    pub standardization: StandardizationRecord,
}

impl DatasetMeta {
    pub fn path_for(csv_path: &Path) -> PathBuf {
        let mut s = csv_path.as_os_str().to_owned();
        s.push(".meta");
        PathBuf::from(s)
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("persons", self.persons);
        doc.push("situations", self.situations);
        doc.push("alternatives", self.alt_count);
        doc.push("attributes", self.attr_count);
        doc.push("continuous", self.cont_count);
        doc.push("binary", self.bin_count);
        doc.extend(self.schema.to_kv().prefixed("schema"));
        doc.extend(self.standardization.to_kv().prefixed("standardization"));
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        Ok(Self {
            persons: doc.parse_value("persons")?,
            situations: doc.parse_value("situations")?,
            alt_count: doc.parse_value("alternatives")?,
            attr_count: doc.parse_value("attributes")?,
            cont_count: doc.parse_value("continuous")?,
            bin_count: doc.parse_value("binary")?,
            schema: Schema::from_kv(&doc.section("schema"))?,
            standardization: StandardizationRecord::from_kv(&doc.section("standardization"))?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvDoc::read(path)?)
    }
}

/// Write the canonical long-format dump plus its `.meta` sidecar. Returns the
/// sidecar path. Every alternative gets a row, unavailable ones flagged 0.
pub fn dump_dataset(
    ds: &ChoiceDataset,
    csv_path: &Path,
    standardization: Option<&StandardizationRecord>,
) -> Result<PathBuf> {
    let file = File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = ["person", "situation", "alternative", "chosen", "available"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ds.attr_names().iter().cloned());
    header.extend(ds.cont_names().iter().cloned());
    header.extend(ds.bin_names().iter().cloned());
    w.write_record(&header)?;
    let flag = |b: bool| if b { "1" } else { "0" }.to_string();
    for person in ds.persons() {
        let cont: Vec<String> = person.s_cont.iter().map(|v| format!("{v:?}")).collect();
        let bin: Vec<String> = person.s_bin.iter().map(|&b| flag(b)).collect();
        for (t, sit) in person.situations.iter().enumerate() {
            for (j, alt) in ds.alt_ids().iter().enumerate() {
                let mut rec = vec![
                    person.id.clone(),
                    t.to_string(),
                    alt.clone(),
                    flag(sit.chosen() == j),
                    flag(sit.is_available(j)),
                ];
                rec.extend(sit.attrs_of(j).iter().map(|v| format!("{v:?}")));
                rec.extend(cont.iter().cloned());
                rec.extend(bin.iter().cloned());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let meta = DatasetMeta {
        persons: ds.n_persons(),
        situations: ds.n_situations(),
        alt_count: ds.alt_count(),
        attr_count: ds.attr_count(),
        cont_count: ds.cont_count(),
        bin_count: ds.bin_count(),
        schema: Schema::canonical(ds),
        standardization: standardization.cloned().unwrap_or_default(),
    };
    let meta_path = DatasetMeta::path_for(csv_path);
    meta.to_kv().write(&meta_path)?;
    Ok(meta_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::AttributeSpec;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        p
    }

    fn schema() -> Schema {
        Schema {
            person: "pid".into(),
            situation: "sid".into(),
            alternative: "alt".into(),
            chosen: "y".into(),
            available: Some("av".into()),
            attributes: vec![
                AttributeSpec {
                    name: "asc_b".into(),
                    column: None,
                    alternatives: vec!["b".into()],
                },
                AttributeSpec {
                    name: "time".into(),
                    column: Some("tt".into()),
                    alternatives: vec![],
                },
            ],
            continuous: vec!["age".into()],
            binary: vec!["female".into()],
            fixed_zero: vec![],
        }
    }

    const MINIMAL: &str = "pid,sid,alt,y,av,tt,age,female
2,1,a,0,1,10,40,1
2,1,b,1,1,20,40,1
1,1,b,0,1,25,31,0
1,1,a,1,1,15,31,0
";

    #[test]
    fn minimal_two_people() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(&write(&dir, "d.csv", MINIMAL), &schema()).unwrap();
        assert_eq!(ds.n_persons(), 2);
        assert_eq!(ds.alt_count(), 2);
        assert_eq!(ds.n_situations(), 2);
        // person ids ascending, alternatives ascending
        assert_eq!(ds.person(0).id, "1");
        assert_eq!(ds.alt_ids(), &["a".to_string(), "b".to_string()]);
        let sit = &ds.person(0).situations[0];
        assert_eq!(sit.chosen(), 0);
        assert_eq!(sit.attrs_of(0), &[0.0, 15.0]);
        assert_eq!(sit.attrs_of(1), &[1.0, 25.0]);
        assert_eq!(ds.person(1).s_cont, vec![40.0]);
        assert_eq!(ds.person(1).s_bin, vec![true]);
    }

    #[test]
    fn chosen_unavailable_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let text = MINIMAL.replace("2,1,b,1,1,20", "2,1,b,1,0,20");
        let r = load_dataset(&write(&dir, "d.csv", &text), &schema());
        assert!(matches!(r, Err(Error::ChosenUnavailable { .. })), "{r:?}");
    }

    #[test]
    fn input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = schema();
        s.continuous = vec!["income".into()];
        let r = load_dataset(&write(&dir, "d.csv", MINIMAL), &s);
        assert!(matches!(r, Err(Error::MissingColumn(c)) if c == "income"));

        let text = MINIMAL.replace("40,1\n", "40,2\n");
        let r = load_dataset(&write(&dir, "e.csv", &text), &schema());
        assert!(matches!(r, Err(Error::NonBinary { column, .. }) if column == "female"));

        let text = MINIMAL.replace("2,1,a,0,1,10,40,1", "2,1,a,0,1,10,40");
        let r = load_dataset(&write(&dir, "f.csv", &text), &schema());
        assert!(matches!(r, Err(Error::Ragged(_))), "{r:?}");
    }

    #[test]
    fn missing_alternative_row_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let text = "pid,sid,alt,y,tt\n1,1,1,1,3\n1,1,2,0,4\n1,2,1,0,5\n1,2,3,1,6\n1,2,2,0,1\n";
        let mut s = schema();
        s.available = None;
        s.continuous.clear();
        s.binary.clear();
        s.attributes.remove(0);
        let ds = load_dataset(&write(&dir, "d.csv", text), &s).unwrap();
        assert_eq!(ds.alt_count(), 3);
        let first = &ds.person(0).situations[0];
        assert_eq!(first.available(), &[true, true, false]);
        assert_eq!(ds.person(0).situations[1].chosen(), 2);
    }

    #[test]
    fn dump_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = load_dataset(&write(&dir, "d.csv", MINIMAL), &schema()).unwrap();
        let out = dir.path().join("dump.csv");
        let meta_path = dump_dataset(&ds, &out, None).unwrap();
        let meta = DatasetMeta::read(&meta_path).unwrap();
        assert_eq!(meta.situations, 2);
        let back = load_dataset(&out, &meta.schema).unwrap();
        assert_eq!(back, ds);
    }
}
