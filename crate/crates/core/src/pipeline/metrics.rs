use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{EvalReport, LossRecord, RerankReport, Teacher};
use crate::error::{Error, Result};

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_losses_csv(records: &[LossRecord], path: &Path) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "phase,iteration,step,distill_source,distill_generated,alignment,total")?;
        for r in records {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.phase, r.iteration, r.step, r.distill_source, r.distill_generated, r.alignment, r.total
            )?;
        }
        Ok(())
    })
}

/// One row per (report, language, budget); language `avg` holds the mean.
pub fn write_eval_csv(reports: &[EvalReport], path: &Path) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "tag,iteration,split,language,queries,budget,recall")?;
        for r in reports {
            for l in &r.per_language {
                for (b, v) in r.budgets.iter().zip(&l.recall) {
                    writeln!(w, "{},{},{},{},{},{},{}", r.tag, r.iteration, r.split.name(), l.name, l.queries, b, v)?;
                }
            }
            let total: usize = r.per_language.iter().map(|l| l.queries).sum();
            for (b, v) in r.budgets.iter().zip(&r.average) {
                writeln!(w, "{},{},{},avg,{},{},{}", r.tag, r.iteration, r.split.name(), total, b, v)?;
            }
        }
        Ok(())
    })
}

pub fn write_rerank_csv(report: &RerankReport, path: &Path) -> Result<()> {
    write_with(path, |w| {
        writeln!(w, "fraction,depth,teacher,budget,recall,baseline")?;
        for r in &report.rows {
            let teacher = match r.teacher {
                Teacher::Generator => "generator",
                Teacher::CrossScorer => "cross_scorer",
            };
            writeln!(w, "{},{},{},{},{},{}", r.fraction, r.depth, teacher, r.budget, r.recall, r.baseline)?;
        }
        Ok(())
    })
}
