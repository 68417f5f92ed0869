use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{ModelError, SensorId, SubsystemId, SystemModel};

/// `cause` influences `effect` through a rule of `via`, `delay` ticks later.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CausalEdge {
    pub cause: SensorId,
    pub effect: SensorId,
    pub via: SubsystemId,
    pub delay: u32,
}

/// Sensor-level causal graph read off the rule tables. Cycles are allowed;
/// a feedback loop shows up as a cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CausalGraph {
    sensors: BTreeSet<SensorId>,
    edges: Vec<CausalEdge>,
    incoming: BTreeMap<SensorId, Vec<usize>>,
    outgoing: BTreeMap<SensorId, Vec<usize>>,
}

impl CausalGraph {
    pub(super) fn from_model(model: &SystemModel) -> Self {
        let mut shortest: BTreeMap<(SensorId, SensorId, SubsystemId), u32> = BTreeMap::new();
        for sub in model.subsystems() {
            for rule in &sub.rules {
                for cause in rule.guard.keys() {
                    for effect in &rule.effects {
                        // A sensor does not cause its own effect.
                        if &effect.target == cause {
                            continue;
                        }
                        let key = (cause.clone(), effect.target.clone(), sub.id.clone());
                        let delay = shortest.entry(key).or_insert(effect.delay);
                        *delay = (*delay).min(effect.delay);
                    }
                }
            }
        }
        let edges = shortest
            .into_iter()
            .map(|((cause, effect, via), delay)| CausalEdge {
                cause,
                effect,
                via,
                delay,
            })
            .collect();
        Self::new(model.sensors().iter().map(|s| s.id.clone()), edges)
    }

    pub fn new(sensors: impl IntoIterator<Item = SensorId>, mut edges: Vec<CausalEdge>) -> Self {
        edges.sort();
        edges.dedup();
        let mut sensors: BTreeSet<SensorId> = sensors.into_iter().collect();
        let mut incoming: BTreeMap<SensorId, Vec<usize>> = BTreeMap::new();
        let mut outgoing: BTreeMap<SensorId, Vec<usize>> = BTreeMap::new();
        for (i, e) in edges.iter().enumerate() {
            sensors.insert(e.cause.clone());
            sensors.insert(e.effect.clone());
            incoming.entry(e.effect.clone()).or_default().push(i);
            outgoing.entry(e.cause.clone()).or_default().push(i);
        }
        Self {
            sensors,
            edges,
            incoming,
            outgoing,
        }
    }

    /// Edges ordered by (cause, effect, via).
    pub fn edges(&self) -> &[CausalEdge] {
        &self.edges
    }

    pub fn sensors(&self) -> &BTreeSet<SensorId> {
        &self.sensors
    }

    pub fn contains(&self, sensor: &str) -> bool {
        self.sensors.contains(sensor)
    }

    fn check(&self, sensor: &str) -> Result<(), ModelError> {
        if self.contains(sensor) {
            Ok(())
        } else {
            Err(ModelError::UnknownSensor {
                context: "causal graph".to_owned(),
                sensor: sensor.into(),
            })
        }
    }

    fn edges_into(&self, sensor: &str) -> impl Iterator<Item = &CausalEdge> {
        self.incoming
            .get(sensor)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    fn edges_from(&self, sensor: &str) -> impl Iterator<Item = &CausalEdge> {
        self.outgoing
            .get(sensor)
            .into_iter()
            .flatten()
            .map(|&i| &self.edges[i])
    }

    /// Every (sensor, subsystem) pair on some edge path into `sensor`.
    ///
    /// On a cycle through `sensor` the sensor is its own ancestor.
    pub fn causal_ancestors(
        &self,
        sensor: &str,
    ) -> Result<BTreeSet<(SensorId, SubsystemId)>, ModelError> {
        self.check(sensor)?;
        let mut found = BTreeSet::new();
        let mut visited: BTreeSet<&str> = BTreeSet::from([sensor]);
        let mut queue = VecDeque::from([sensor]);
        while let Some(current) = queue.pop_front() {
            for edge in self.edges_into(current) {
                found.insert((edge.cause.clone(), edge.via.clone()));
                if visited.insert(edge.cause.as_str()) {
                    queue.push_back(edge.cause.as_str());
                }
            }
        }
        Ok(found)
    }

    /// Sensors reachable from `sensor` along at least one edge.
    pub fn causal_descendants(&self, sensor: &str) -> Result<BTreeSet<SensorId>, ModelError> {
        self.check(sensor)?;
        let mut found = BTreeSet::new();
        let mut queue = VecDeque::from([sensor]);
        while let Some(current) = queue.pop_front() {
            for edge in self.edges_from(current) {
                if found.insert(edge.effect.clone()) {
                    queue.push_back(edge.effect.as_str());
                }
            }
        }
        Ok(found)
    }

    /// A shortest edge path from any of `sources` to `target`.
    ///
    /// Returns an empty path if `target` is itself a source and `None` if it
    /// is unreachable. Ties go to the lexicographically smallest edges, so
    /// the answer is deterministic.
    pub fn shortest_path<'a>(
        &self,
        sources: impl IntoIterator<Item = &'a SensorId>,
        target: &str,
    ) -> Option<Vec<CausalEdge>> {
        let mut parent: BTreeMap<&str, Option<&CausalEdge>> = BTreeMap::new();
        let mut queue = VecDeque::new();
        let mut starts: Vec<&str> = sources.into_iter().map(SensorId::as_str).collect();
        starts.sort_unstable();
        for s in starts {
            if parent.insert(s, None).is_none() {
                queue.push_back(s);
            }
        }
        while let Some(current) = queue.pop_front() {
            if current == target {
                let mut path = Vec::new();
                let mut at = current;
                while let Some(Some(edge)) = parent.get(at) {
                    path.push((*edge).clone());
                    at = edge.cause.as_str();
                }
                path.reverse();
                return Some(path);
            }
            for edge in self.edges_from(current) {
                if !parent.contains_key(edge.effect.as_str()) {
                    parent.insert(edge.effect.as_str(), Some(edge));
                    queue.push_back(edge.effect.as_str());
                }
            }
        }
        None
    }

    /// True if the graph has a directed cycle.
    pub fn has_cycle(&self) -> bool {
        self.sensors.iter().any(|s| {
            self.causal_descendants(s.as_str())
                .map(|d| d.contains(s))
                .unwrap_or(false)
        })
    }
}
