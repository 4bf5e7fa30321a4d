use serde::Serialize;

/// Multinomial logistic regression over request features, trained one
/// sample at a time, plus running mean execution time per class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnlineClassifier {
    /// `classes x (dim + 1)`; the last column is the bias.
    weights: Vec<Vec<f64>>,
    learning_rate: f64,
    dim: usize,
    class_sum: Vec<f64>,
    class_count: Vec<u64>,
    /// Upper edges of the execution-time classes.
    edges: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassPrediction {
    pub class: usize,
    /// `None` before any observation.
    pub expected_exec_ms: Option<f64>,
}

impl OnlineClassifier {
    pub fn new(classes: usize, dim: usize, learning_rate: f64) -> Self {
        let classes = classes.max(1);
        let mut edges = Vec::with_capacity(classes - 1);
        for i in 1..classes {
            edges.push(i as f64);
        }
        OnlineClassifier {
            weights: vec![vec![0.0; dim + 1]; classes],
            learning_rate,
            dim,
            class_sum: vec![0.0; classes],
            class_count: vec![0; classes],
            edges,
        }
    }

    /// Classes are execution-time buckets split at `edges` (ms).
    pub fn with_edges(edges: &[f64], dim: usize, learning_rate: f64) -> Self {
        let mut c = OnlineClassifier::new(edges.len() + 1, dim, learning_rate);
        c.edges = edges.to_vec();
        c
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Bucket index of an execution time.
    pub fn class_of(&self, exec_ms: f64) -> usize {
        self.edges.partition_point(|&e| e <= exec_ms)
    }

    fn scores(&self, features: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| w[..self.dim].iter().zip(features).map(|(a, b)| a * b).sum::<f64>() + w[self.dim])
            .collect()
    }

    pub fn probabilities(&self, features: &[f64]) -> Vec<f64> {
        softmax(&self.scores(features))
    }

    /// Cross-entropy of the true class on one sample.
    pub fn loss(&self, features: &[f64], class: usize) -> f64 {
        let s = self.scores(features);
        let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        log_z - s[class]
    }

    /// One stochastic gradient step on the cross-entropy of `true_class`.
    /// Samples of the wrong dimension or with non-finite values are ignored.
    pub fn update(&mut self, features: &[f64], true_class: usize) {
        if features.len() != self.dim || true_class >= self.classes() || features.iter().any(|v| !v.is_finite()) {
            return;
        }
        let probs = self.probabilities(features);
        for (k, w) in self.weights.iter_mut().enumerate() {
            let g = if k == true_class { 1.0 } else { 0.0 } - probs[k];
            if g == 0.0 {
                continue;
            }
            let step = self.learning_rate * g;
            for (wi, xi) in w.iter_mut().zip(features) {
                *wi += step * xi;
            }
            w[self.dim] += step;
        }
    }

    /// Updates the class statistics and takes a gradient step for the class `exec_ms` falls in.
    pub fn observe(&mut self, features: &[f64], exec_ms: f64) {
        let class = self.class_of(exec_ms);
        self.class_sum[class] += exec_ms;
        self.class_count[class] += 1;
        self.update(features, class);
    }

    pub fn global_mean(&self) -> Option<f64> {
        let n: u64 = self.class_count.iter().sum();
        (n > 0).then(|| self.class_sum.iter().sum::<f64>() / n as f64)
    }

    /// Highest-scoring class (ties to the lowest index) and its mean
    /// execution time, or the global mean when that class has no samples.
    pub fn predict(&self, features: &[f64]) -> ClassPrediction {
        if features.len() != self.dim {
            return ClassPrediction { class: 0, expected_exec_ms: self.global_mean() };
        }
        let scores = self.scores(features);
        let mut best = 0;
        for (k, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = k;
            }
        }
        let expected = if self.class_count[best] > 0 {
            Some(self.class_sum[best] / self.class_count[best] as f64)
        } else {
            self.global_mean()
        };
        ClassPrediction { class: best, expected_exec_ms: expected }
    }
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
