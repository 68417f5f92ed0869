use std::collections::BTreeSet;

use super::{ModelError, PartialState, Rule, SensorId, Subsystem, SubsystemId, SystemModel};

/// Upper bound on the joint guard states enumerated by [`SystemModel::compose`].
pub const MAX_COMPOSED_GUARD_STATES: usize = 1 << 20;

impl SystemModel {
    /// Merges subsystems `first` and `second` into one subsystem `new_id`
    /// over the union of their sensors.
    ///
    /// The merged table has one rule per joint state of the sensors the two
    /// guards read. A joint state fires the effects of `second`'s matching
    /// rule followed by those of `first`'s, so where both write the same
    /// sensor at the same tick, `first` wins. The merged subsystem takes the
    /// priority slot of whichever input ranked higher and the kind of `first`.
    ///
    /// When `first` directly precedes `second` in priority, the composed
    /// model reproduces the original state trajectories tick for tick.
    pub fn compose(
        &self,
        first: &str,
        second: &str,
        new_id: impl Into<SubsystemId>,
    ) -> Result<SystemModel, ModelError> {
        let new_id = new_id.into();
        let ia = self
            .subsystem_index(first)
            .ok_or_else(|| ModelError::UnknownSubsystem(first.into()))?;
        let ib = self
            .subsystem_index(second)
            .ok_or_else(|| ModelError::UnknownSubsystem(second.into()))?;
        if ia == ib {
            return Err(ModelError::SelfComposition(first.into()));
        }
        let (a, b) = (&self.subsystems[ia], &self.subsystems[ib]);

        let mut sensors = a.sensors.clone();
        sensors.extend(b.sensors.iter().filter(|s| !a.owns(s.as_str())).cloned());

        let read: BTreeSet<&SensorId> = a
            .rules
            .iter()
            .chain(&b.rules)
            .flat_map(|r| r.guard.keys())
            .collect();
        let read: Vec<&SensorId> = sensors.iter().filter(|s| read.contains(s)).collect();
        let sizes: Vec<usize> = read
            .iter()
            .map(|s| self.sensor(s.as_str()).map_or(0, |x| x.states.len()))
            .collect();
        let total = sizes.iter().try_fold(1usize, |acc, &n| acc.checked_mul(n));
        let total = match total {
            Some(t) if t <= MAX_COMPOSED_GUARD_STATES => t,
            other => {
                return Err(ModelError::CompositionTooLarge {
                    first: a.id.clone(),
                    second: b.id.clone(),
                    size: other.unwrap_or(usize::MAX),
                    limit: MAX_COMPOSED_GUARD_STATES,
                })
            }
        };

        let mut rules = Vec::new();
        let mut digits = vec![0usize; read.len()];
        for _ in 0..total {
            let guard: PartialState = read
                .iter()
                .zip(&digits)
                .map(|(s, &d)| {
                    let sensor = self.sensor(s.as_str()).expect("validated");
                    ((*s).clone(), sensor.states[d].0.clone())
                })
                .collect();
            let matching = |sub: &Subsystem| {
                sub.rules
                    .iter()
                    .find(|r| r.guard.iter().all(|(s, l)| guard.get(s) == Some(l)))
                    .map(|r| r.effects.clone())
                    .unwrap_or_default()
            };
            let mut effects = matching(b);
            effects.extend(matching(a));
            if !effects.is_empty() {
                rules.push(Rule { guard, effects });
            }
            // Odometer increment, last sensor fastest.
            for k in (0..digits.len()).rev() {
                digits[k] += 1;
                if digits[k] < sizes[k] {
                    break;
                }
                digits[k] = 0;
            }
        }

        let merged = Subsystem {
            id: new_id.clone(),
            kind: a.kind,
            sensors,
            rules,
        };
        let slot = ia.min(ib);
        let mut subsystems = Vec::with_capacity(self.subsystems.len() - 1);
        for (i, sub) in self.subsystems.iter().enumerate() {
            if i == slot {
                subsystems.push(merged.clone());
            } else if i != ia && i != ib {
                subsystems.push(sub.clone());
            }
        }
        SystemModel::new(self.sensors.clone(), subsystems)
    }
}
