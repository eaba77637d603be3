//! Learning-rate policies.

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    /// Exponential warm-up from `base_lr · warmup_start_factor` to `base_lr`
    /// over `warmup_iters`, then divide by `decay_factor` whenever the
    /// validation loss has not improved for `patience` iterations.
    WarmupPlateau { warmup_iters: usize, warmup_start_factor: f64, patience: usize, decay_factor: f64 },
    /// Divide by `factor` once `iter >= drop_at`.
    Step { drop_at: usize, factor: f64 },
}

/// Learning rate at `iter` given the `(iteration, validation loss)` history.
/// Pure: replaying the same history yields the same rate.
pub fn lr_schedule(iter: usize, base_lr: f64, policy: &LrPolicy, val_history: &[(usize, f64)]) -> f64 {
    match *policy {
        LrPolicy::Step { drop_at, factor } => {
            if iter >= drop_at {
                base_lr / factor
            } else {
                base_lr
            }
        }
        LrPolicy::WarmupPlateau { warmup_iters, warmup_start_factor, patience, decay_factor } => {
            if iter < warmup_iters {
                let progress = iter as f64 / warmup_iters as f64;
                return base_lr * libm::pow(warmup_start_factor, 1.0 - progress);
            }
            let decays = plateau_events(warmup_iters, patience, val_history.iter().filter(|h| h.0 <= iter));
            base_lr / libm::pow(decay_factor, decays as f64)
        }
    }
}

fn plateau_events<'a>(start: usize, patience: usize, history: impl Iterator<Item = &'a (usize, f64)>) -> usize {
    let mut best = f64::INFINITY;
    let mut reference = start;
    let mut events = 0;
    for &(it, loss) in history {
        if loss < best {
            best = loss;
            reference = reference.max(it);
        } else if it >= reference + patience {
            events += 1;
            reference = it;
        }
    }
    events
}
