use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

/// `a[i][j]`: accuracy on the test split of task `i` after training on
/// task `j`, defined for `i <= j`. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    num_tasks: usize,
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_tasks: usize) -> Self {
        AccuracyMatrix {
            num_tasks,
            entries: vec![vec![None; num_tasks]; num_tasks],
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.num_tasks
    }

    pub fn set(&mut self, task: usize, step: usize, value: f64) -> Result<()> {
        if task > step || step >= self.num_tasks {
            return input_err(format!(
                "entry ({task}, {step}) outside the lower triangle of a {}-task matrix",
                self.num_tasks
            ));
        }
        if !(0.0..=1.0).contains(&value) {
            return input_err(format!("accuracy {value} outside [0, 1]"));
        }
        self.entries[task][step] = Some(value);
        Ok(())
    }

    pub fn get(&self, task: usize, step: usize) -> Option<f64> {
        self.entries.get(task)?.get(step).copied().flatten()
    }

    fn require(&self, task: usize, step: usize) -> Result<f64> {
        match self.get(task, step) {
            Some(v) => Ok(v),
            None => input_err(format!("accuracy entry ({task}, {step}) is missing")),
        }
    }

    pub fn is_complete(&self) -> bool {
        (0..self.num_tasks).all(|j| (0..=j).all(|i| self.get(i, j).is_some()))
    }

    /// Mean accuracy over tasks seen so far after step `step`.
    pub fn step_mean(&self, step: usize) -> Result<f64> {
        let sum = (0..=step)
            .map(|i| self.require(i, step))
            .sum::<Result<f64>>()?;
        Ok(sum / (step + 1) as f64)
    }

    /// Final average accuracy over all tasks.
    pub fn average_accuracy(&self) -> Result<f64> {
        if self.num_tasks == 0 {
            return input_err("accuracy matrix has no tasks");
        }
        self.step_mean(self.num_tasks - 1)
    }

    /// Average forgetting: for each earlier task, the best accuracy at or
    /// after learning it (up to the step before last) minus its final
    /// accuracy. Not clamped, so improvements show up as negative values.
    pub fn forgetting(&self) -> Result<f64> {
        let k = self.num_tasks;
        if k < 2 {
            return input_err("forgetting needs at least two tasks");
        }
        let mut total = 0.0;
        for task in 0..k - 1 {
            let last = self.require(task, k - 1)?;
            let mut best = f64::NEG_INFINITY;
            for step in task..k - 1 {
                best = best.max(self.require(task, step)?);
            }
            total += best - last;
        }
        Ok(total / (k - 1) as f64)
    }

    /// `(first_task_acc, rest_acc)`: final accuracy on the first task and
    /// mean final accuracy on the later ones.
    pub fn stability_plasticity(&self) -> Result<(f64, f64)> {
        let k = self.num_tasks;
        if k < 2 {
            return input_err("stability needs at least two tasks");
        }
        let rest = (1..k)
            .map(|i| self.require(i, k - 1))
            .sum::<Result<f64>>()?;
        Ok((self.require(0, k - 1)?, rest / (k - 1) as f64))
    }

    /// Rows as strings with empty cells above the diagonal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task");
        for j in 0..self.num_tasks {
            out.push_str(&format!(",after_{}", j + 1));
        }
        out.push('\n');
        for i in 0..self.num_tasks {
            out.push_str(&(i + 1).to_string());
            for j in 0..self.num_tasks {
                out.push(',');
                if let Some(v) = self.get(i, j) {
                    out.push_str(&v.to_string());
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return input_err("prediction and label counts differ");
    }
    if labels.is_empty() {
        return input_err("accuracy of an empty split is undefined");
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn from_rows(rows: &[&[f64]]) -> AccuracyMatrix {
        let mut m = AccuracyMatrix::new(rows.len());
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if j >= i {
                    m.set(i, j, v).unwrap();
                }
            }
        }
        m
    }

    #[test]
    fn hand_computed_example() {
        let m = from_rows(&[&[0.9, 0.8, 0.7], &[0.0, 0.6, 0.5], &[0.0, 0.0, 0.4]]);
        assert!((m.average_accuracy().unwrap() - 0.5333333333333333).abs() <= 1e-12);
        assert!((m.forgetting().unwrap() - 0.15).abs() <= 1e-12);
        let (s, p) = m.stability_plasticity().unwrap();
        assert!((s - 0.7).abs() <= 1e-12);
        assert!((p - 0.45).abs() <= 1e-12);

        let two = from_rows(&[&[0.9, 0.7], &[0.0, 0.8]]);
        assert!((two.average_accuracy().unwrap() - 0.75).abs() <= 1e-12);
        assert!((two.forgetting().unwrap() - 0.2).abs() <= 1e-12);
        let split = from_rows(&[&[0.5, 0.6], &[0.0, 0.9]]);
        assert_eq!(split.stability_plasticity().unwrap(), (0.6, 0.9));
    }

    #[test]
    fn constant_matrix() {
        let c = from_rows(&[&[0.3; 4], &[0.3; 4], &[0.3; 4], &[0.3; 4]]);
        assert!((c.average_accuracy().unwrap() - 0.3).abs() <= 1e-12);
        assert_eq!(c.forgetting().unwrap(), 0.0);
        assert_eq!(c.stability_plasticity().unwrap(), (0.3, 0.3));
    }

    #[test]
    fn perfect_retention_and_improvement() {
        let flat = from_rows(&[&[0.8, 0.8], &[0.0, 0.9]]);
        assert_eq!(flat.forgetting().unwrap(), 0.0);
        let better = from_rows(&[&[0.6, 0.8], &[0.0, 0.9]]);
        assert!((better.forgetting().unwrap() + 0.2).abs() <= 1e-12);
    }

    #[test]
    fn single_task_and_gaps() {
        let one = from_rows(&[&[0.7]]);
        assert_eq!(one.average_accuracy().unwrap(), 0.7);
        assert!(one.forgetting().is_err());
        assert!(one.stability_plasticity().is_err());
        let mut gap = AccuracyMatrix::new(2);
        gap.set(0, 0, 0.5).unwrap();
        assert!(!gap.is_complete());
        assert!(gap.average_accuracy().is_err());
        assert!(gap.set(1, 0, 0.5).is_err());
        assert!(gap.set(0, 1, 1.5).is_err());
    }

    #[test]
    fn accuracy_counts_hits() {
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 0, 4]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn metrics_ignore_fill_order(vals in proptest::collection::vec(0.0f64..=1.0, 10), seed in 0u64..1000) {
            let k = 4;
            let cells: Vec<(usize, usize)> = (0..k).flat_map(|j| (0..=j).map(move |i| (i, j))).collect();
            let mut a = AccuracyMatrix::new(k);
            for (&(i, j), &v) in cells.iter().zip(&vals) {
                a.set(i, j, v).unwrap();
            }
            let mut order: Vec<usize> = (0..cells.len()).collect();
            crate::numerics::SeededRng::new(seed).shuffle(&mut order);
            let mut b = AccuracyMatrix::new(k);
            for idx in order {
                let (i, j) = cells[idx];
                b.set(i, j, vals[idx]).unwrap();
            }
            prop_assert_eq!(a.average_accuracy().unwrap(), b.average_accuracy().unwrap());
            prop_assert_eq!(a.forgetting().unwrap(), b.forgetting().unwrap());
        }
    }
}
