use std::fmt::Write as _;
use std::path::Path;

use super::{Dataset, Label, LabeledSequence, SlipError, SlipModel};
use crate::daq::LogFile;

pub const MODEL_FORMAT_TAG: &str = "anyskin-slip-model 1";
const INDEX_HEADER: &str = "file,split,label,object_id,instance_id";

fn model_err(msg: impl Into<String>) -> SlipError {
    SlipError::ModelFormat(msg.into())
}

impl SlipModel {
    /// Text form: tag, `hidden`, `input_scale`, `final_loss`, `params N`,
    /// then one parameter per line. Floats print in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MODEL_FORMAT_TAG}").unwrap();
        writeln!(s, "hidden {}", self.hidden).unwrap();
        writeln!(s, "input_scale {:?}", self.input_scale).unwrap();
        writeln!(s, "final_loss {:?}", self.final_loss).unwrap();
        writeln!(s, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            writeln!(s, "{p:?}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SlipError> {
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_FORMAT_TAG) {
            return Err(model_err("missing or unsupported format tag"));
        }
        let mut field = |name: &str| -> Result<String, SlipError> {
            let line = lines.next().ok_or_else(|| model_err(format!("missing `{name}`")))?;
            line.strip_prefix(name)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| model_err(format!("expected `{name}`, got {line:?}")))
        };
        let num = |v: String, name: &str| v.parse::<f64>().map_err(|_| model_err(format!("bad {name}")));
        let hidden: usize = field("hidden")?.parse().map_err(|_| model_err("bad hidden size"))?;
        let input_scale = num(field("input_scale")?, "input_scale")?;
        let final_loss = num(field("final_loss")?, "final_loss")?;
        let count: usize = field("params")?.parse().map_err(|_| model_err("bad parameter count"))?;
        if hidden == 0 || count != SlipModel::param_count(hidden) {
            return Err(model_err(format!("{count} parameters do not fit hidden size {hidden}")));
        }
        let params: Vec<f64> = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>().map_err(|_| model_err(format!("bad parameter {l:?}"))))
            .collect::<Result<_, _>>()?;
        if params.len() != count || params.iter().any(|p| !p.is_finite()) || !input_scale.is_finite() {
            return Err(model_err("parameter block is truncated or non-finite"));
        }
        Ok(SlipModel { hidden, input_scale, params, final_loss })
    }

    pub fn save(&self, path: &Path) -> Result<(), SlipError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SlipError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Writes each sequence as a log file plus an `index.csv` describing them.
pub fn export_dataset(data: &Dataset, dir: &Path) -> Result<(), SlipError> {
    std::fs::create_dir_all(dir)?;
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    let splits = [("train", &data.train), ("test", &data.test)];
    for (split, seqs) in splits {
        for (i, s) in seqs.iter().enumerate() {
            let file = format!("{split}_{i:04}.alog");
            LogFile::from_readings(&s.frames)?.save(&dir.join(&file))?;
            writeln!(index, "{file},{split},{},{},{}", s.label.name(), s.object_id, s.instance_id).unwrap();
        }
    }
    std::fs::write(dir.join("index.csv"), index)?;
    Ok(())
}

pub fn import_dataset(dir: &Path) -> Result<Dataset, SlipError> {
    let text = std::fs::read_to_string(dir.join("index.csv"))?;
    let mut lines = text.lines();
    if lines.next() != Some(INDEX_HEADER) {
        return Err(SlipError::DatasetFormat("index.csv header".into()));
    }
    let mut out = Dataset::default();
    for (n, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let bad = || SlipError::DatasetFormat(format!("index row {}", n + 1));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 || f[0].contains(['/', '\\']) {
            return Err(bad());
        }
        let seq = LabeledSequence {
            frames: LogFile::load(&dir.join(f[0]))?.readings(),
            label: f[2].parse::<Label>()?,
            object_id: f[3].parse().map_err(|_| bad())?,
            instance_id: f[4].parse().map_err(|_| bad())?,
        };
        match f[1] {
            "train" => out.train.push(seq),
            "test" => out.test.push(seq),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetics::SensorReading;

    #[test]
    fn model_text_round_trip() {
        let mut m = SlipModel::init(4, 0.0123, 9);
        m.final_loss = 0.25;
        let back = SlipModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        let untrained = SlipModel::init(4, 1.0, 9);
        assert!(SlipModel::from_text(&untrained.to_text()).unwrap().final_loss.is_nan());
        let mut text = m.to_text();
        text.truncate(text.len() - 30);
        assert!(SlipModel::from_text(&text).is_err());
        assert!(SlipModel::from_text("something else\n").is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let frames: Vec<SensorReading> =
            (0..40).map(|i| SensorReading::new((i + 1) * 10_000, [i as f64 * 0.5; 15])).collect();
        let seq = |label, object_id| LabeledSequence { frames: frames.clone(), label, object_id, instance_id: 77 };
        let data = Dataset { train: vec![seq(Label::Slip, 0), seq(Label::NoSlip, 0)], test: vec![seq(Label::Slip, 1)] };
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&data, dir.path()).unwrap();
        assert_eq!(import_dataset(dir.path()).unwrap(), data);
    }
}
