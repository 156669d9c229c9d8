use rand::Rng;
use serde::Serialize;

use super::{kmeans, member_means, ClusterPartition};
use crate::{CoreError, Instance, Point, Result, CAPACITY_TOLERANCE};

/// Smallest admissible coarse level and cluster count.
pub const MIN_LEVEL_NODES: usize = 5;

/// The instance induced by one cluster, with its local-to-global node map.
///
/// Clusters too small to form an instance (fewer than three nodes) keep
/// their node map but carry no instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubGraph {
    pub cluster: usize,
    pub nodes: Vec<usize>,
    #[serde(skip)]
    pub instance: Option<Instance>,
}

/// One coarsening step: the partition of a level, its induced sub-graphs,
/// and the coarse instance it produced (absent when coarsening was
/// degenerate).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Link {
    pub partition: ClusterPartition,
    pub subgraphs: Vec<SubGraph>,
    #[serde(skip)]
    pub coarse: Option<Instance>,
}

/// Chain of progressively coarser instances above an original instance.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiresHierarchy {
    original: Instance,
    /// Finest first: `links[0]` partitions the original.
    links: Vec<Link>,
    degenerate: Option<String>,
}

impl MultiresHierarchy {
    pub fn original(&self) -> &Instance {
        &self.original
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    /// Levels from coarsest to the original.
    pub fn levels(&self) -> Vec<&Instance> {
        let mut levels: Vec<&Instance> = self.links.iter().filter_map(|l| l.coarse.as_ref()).collect();
        levels.reverse();
        levels.push(&self.original);
        levels
    }

    /// Effective number of levels, original included.
    pub fn num_levels(&self) -> usize {
        1 + self.high_level_instances().len()
    }

    /// Coarse instances, finest first.
    pub fn high_level_instances(&self) -> Vec<&Instance> {
        self.links.iter().filter_map(|l| l.coarse.as_ref()).collect()
    }

    /// Sub-graphs induced by the partition of the original instance.
    pub fn sub_instances(&self) -> &[SubGraph] {
        self.links.first().map_or(&[], |l| l.subgraphs.as_slice())
    }

    /// Why coarsening stopped short, if it was degenerate.
    pub fn degenerate(&self) -> Option<&str> {
        self.degenerate.as_deref()
    }
}

#[derive(Serialize)]
struct LevelView<'a> {
    level: usize,
    nodes: usize,
    coords: &'a [Point],
    #[serde(skip_serializing_if = "Option::is_none")]
    assignment: Option<&'a [usize]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    centroids: Option<&'a [Point]>,
}

impl Serialize for MultiresHierarchy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let levels = self.levels();
        let total = levels.len();
        // Level `l` (1-based, coarsest first) is partitioned by the link that
        // produced level `l - 1`.
        let views: Vec<LevelView> = levels
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let link = if i == 0 { None } else { self.links.get(total - 1 - i) };
                LevelView {
                    level: i + 1,
                    nodes: inst.n(),
                    coords: inst.coords(),
                    assignment: link.map(|l| l.partition.assignment()),
                    centroids: link.map(|l| l.partition.centroids()),
                }
            })
            .collect();
        let mut st = s.serialize_struct("MultiresHierarchy", 3)?;
        st.serialize_field("levels", &views)?;
        st.serialize_field("sub_instances", &self.sub_instances())?;
        st.serialize_field("degenerate", &self.degenerate)?;
        st.end()
    }
}

/// Induced sub-instances, one per cluster.
///
/// For CVRP the depot must form its own cluster; that cluster yields no
/// sub-graph and every other sub-instance gets the depot as local node 0.
pub fn build_subgraphs(inst: &Instance, p: &ClusterPartition) -> Result<Vec<SubGraph>> {
    check_partition(inst, p)?;
    let depot = inst.depot();
    let depot_cluster = depot.map(|d| p.assignment()[d]);
    let mut out = Vec::with_capacity(p.k());
    for c in 0..p.k() {
        if Some(c) == depot_cluster {
            continue;
        }
        let members = p.members(c);
        let (nodes, instance) = match depot {
            None => {
                let coords: Vec<Point> = members.iter().map(|&i| inst.coords()[i]).collect();
                let instance = (coords.len() >= 3).then(|| Instance::tsp(coords)).transpose()?;
                (members, instance)
            }
            Some(d) => {
                let mut nodes = vec![d];
                nodes.extend(&members);
                let coords: Vec<Point> = nodes.iter().map(|&i| inst.coords()[i]).collect();
                let demands: Vec<f64> = nodes.iter().map(|&i| inst.demand(i)).collect();
                let instance = (nodes.len() >= 3)
                    .then(|| Instance::cvrp(coords, demands, 0))
                    .transpose()?;
                (nodes, instance)
            }
        };
        out.push(SubGraph {
            cluster: c,
            nodes,
            instance,
        });
    }
    Ok(out)
}

/// The coarse instance whose node `k` sits at the mean of cluster `k`.
///
/// CVRP coarse nodes carry the summed demand of their members; a coarse
/// demand above capacity is reported as a degenerate hierarchy.
pub fn coarsen(inst: &Instance, p: &ClusterPartition) -> Result<Instance> {
    check_partition(inst, p)?;
    let coords = member_means(inst.coords(), p.assignment(), p.k());
    match inst.depot() {
        None => Instance::tsp(coords),
        Some(d) => {
            let depot_cluster = p.assignment()[d];
            let mut demands = vec![0.0; p.k()];
            for (i, &c) in p.assignment().iter().enumerate() {
                demands[c] += inst.demand(i);
            }
            if let Some((c, &dem)) = demands
                .iter()
                .enumerate()
                .find(|(_, &dem)| dem > 1.0 + CAPACITY_TOLERANCE)
            {
                return Err(CoreError::DegenerateHierarchy(format!(
                    "cluster {} aggregates demand {:.4} > capacity",
                    c, dem
                )));
            }
            for dem in demands.iter_mut() {
                *dem = dem.min(1.0);
            }
            Instance::cvrp(coords, demands, depot_cluster)
        }
    }
}

fn check_partition(inst: &Instance, p: &ClusterPartition) -> Result<()> {
    if p.assignment().len() != inst.n() {
        return Err(CoreError::invalid(format!(
            "partition of {} nodes for an instance of {}",
            p.assignment().len(),
            inst.n()
        )));
    }
    if let Some(d) = inst.depot() {
        let dc = p.assignment()[d];
        if p.assignment().iter().filter(|&&c| c == dc).count() != 1 {
            return Err(CoreError::invalid("the depot must be a singleton cluster"));
        }
    }
    Ok(())
}

/// K-means partition of a level. For CVRP the cities are clustered into
/// `k` groups and the depot becomes cluster 0 on its own.
fn partition_level<R: Rng + ?Sized>(inst: &Instance, k: usize, rng: &mut R) -> Result<ClusterPartition> {
    match inst.depot() {
        None => kmeans(inst.coords(), k, rng),
        Some(d) => {
            let cities: Vec<usize> = inst.cities().collect();
            let pts: Vec<Point> = cities.iter().map(|&i| inst.coords()[i]).collect();
            let city_part = kmeans(&pts, k, rng)?;
            let mut assignment = vec![0; inst.n()];
            for (local, &global) in cities.iter().enumerate() {
                assignment[global] = city_part.assignment()[local] + 1;
            }
            assignment[d] = 0;
            ClusterPartition::from_assignment(inst.coords(), assignment, k + 1)
        }
    }
}

/// Builds up to `levels` levels by repeated partition + coarsening with a
/// constant cluster count `k`.
///
/// Stops early when a further level would not shrink the graph or would
/// fall below five nodes, and after a degenerate CVRP coarsening.
pub fn build_hierarchy<R: Rng + ?Sized>(
    inst: &Instance,
    k: usize,
    levels: usize,
    rng: &mut R,
) -> Result<MultiresHierarchy> {
    if levels < 2 {
        return Err(CoreError::invalid(format!("need L >= 2, got {}", levels)));
    }
    if k < MIN_LEVEL_NODES {
        return Err(CoreError::invalid(format!(
            "need K >= {}, got {}",
            MIN_LEVEL_NODES, k
        )));
    }
    let cities = inst.cities().count();
    if cities < k {
        return Err(CoreError::invalid(format!(
            "K = {} clusters for {} nodes",
            k, cities
        )));
    }

    let mut links = Vec::new();
    let mut degenerate = None;
    let mut current = inst.clone();
    for _ in 1..levels {
        let level_cities = current.cities().count();
        if !links.is_empty() && k >= level_cities {
            break;
        }
        let partition = partition_level(&current, k, rng)?;
        let subgraphs = build_subgraphs(&current, &partition)?;
        let coarse = match coarsen(&current, &partition) {
            Ok(c) => Some(c),
            Err(CoreError::DegenerateHierarchy(msg)) => {
                degenerate = Some(msg);
                None
            }
            Err(e) => return Err(e),
        };
        let next = coarse.clone();
        links.push(Link {
            partition,
            subgraphs,
            coarse,
        });
        match next {
            Some(c) => current = c,
            None => break,
        }
    }
    Ok(MultiresHierarchy {
        original: inst.clone(),
        links,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{generate_cvrp, generate_uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_cluster_subgraph_is_original() {
        let inst = generate_uniform(10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let p = ClusterPartition::from_assignment(inst.coords(), vec![0; 10], 1).unwrap();
        let subs = build_subgraphs(&inst, &p).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].instance.as_ref().unwrap(), &inst);
    }

    #[test]
    fn subgraph_nodes_partition_the_instance() {
        let inst = generate_uniform(10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let p = kmeans(inst.coords(), 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let subs = build_subgraphs(&inst, &p).unwrap();
        let mut all: Vec<usize> = subs.iter().flat_map(|s| s.nodes.clone()).collect();
        assert_eq!(all.len(), 10);
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for s in &subs {
            if let Some(sub) = &s.instance {
                for (local, &global) in s.nodes.iter().enumerate() {
                    assert_eq!(sub.coords()[local], inst.coords()[global]);
                }
            }
        }
    }

    #[test]
    fn coarsen_hand_example() {
        let inst = Instance::tsp(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 2.0),
            Point::new(2.0, 2.0),
            Point::new(5.0, 5.0),
        ])
        .unwrap();
        let p = ClusterPartition::from_assignment(inst.coords(), vec![0, 0, 1, 1, 2], 3).unwrap();
        let coarse = coarsen(&inst, &p).unwrap();
        assert_eq!(coarse.coords()[0], Point::new(1.0, 0.0));
        assert_eq!(coarse.coords()[1], Point::new(1.0, 2.0));
        assert_eq!(coarse.dist(0, 1), 2.0);
    }

    #[test]
    fn singleton_clusters_coarsen_to_original() {
        let inst = generate_uniform(7, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = ClusterPartition::from_assignment(inst.coords(), (0..7).collect(), 7).unwrap();
        assert_eq!(coarsen(&inst, &p).unwrap(), inst);
    }

    #[test]
    fn identical_points_coarsen_to_that_point() {
        let q = Point::new(0.25, 0.75);
        let inst = Instance::tsp(vec![q; 6]).unwrap();
        let p = ClusterPartition::from_assignment(inst.coords(), vec![0, 1, 2, 0, 1, 2], 3).unwrap();
        assert!(coarsen(&inst, &p).unwrap().coords().iter().all(|&c| c == q));
    }

    #[test]
    fn two_level_sizes() {
        let inst = generate_uniform(100, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let h = build_hierarchy(&inst, 10, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let sizes: Vec<usize> = h.levels().iter().map(|l| l.n()).collect();
        assert_eq!(sizes, vec![10, 100]);
        assert_eq!(h.sub_instances().len(), 10);
        assert_eq!(h.levels().last().unwrap(), &&inst);
    }

    #[test]
    fn truncates_when_levels_stop_shrinking() {
        let inst = generate_uniform(20, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let h = build_hierarchy(&inst, 5, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(h.num_levels(), 2);
        let deep = generate_uniform(60, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let h = build_hierarchy(&deep, 5, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let sizes: Vec<usize> = h.levels().iter().map(|l| l.n()).collect();
        assert_eq!(sizes, vec![5, 60]);
        let h = build_hierarchy(&deep, 6, 3, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(h.num_levels(), 2);
    }

    #[test]
    fn partition_law_at_every_link() {
        let inst = generate_uniform(200, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let h = build_hierarchy(&inst, 12, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(h.num_levels(), 2);
        let levels = h.levels();
        for (i, link) in h.links().iter().enumerate() {
            let fine = levels[levels.len() - 1 - i];
            assert_eq!(link.partition.sizes().iter().sum::<usize>(), fine.n());
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let inst = generate_uniform(8, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(build_hierarchy(&inst, 10, 2, &mut rng).is_err());
        assert!(build_hierarchy(&inst, 5, 1, &mut rng).is_err());
        assert!(build_hierarchy(&inst, 4, 2, &mut rng).is_err());
    }

    #[test]
    fn deterministic() {
        let inst = generate_uniform(50, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let a = build_hierarchy(&inst, 5, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = build_hierarchy(&inst, 5, 2, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cvrp_hierarchy_keeps_depot() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let inst = generate_cvrp(20, &mut rng).unwrap();
            let h = build_hierarchy(&inst, 5, 2, &mut rng).unwrap();
            let subs = h.sub_instances();
            assert_eq!(subs.len(), 5);
            let covered: usize = subs.iter().map(|s| s.nodes.len() - 1).sum();
            assert_eq!(covered, 20);
            for s in subs {
                assert_eq!(s.nodes[0], 0);
                if let Some(sub) = &s.instance {
                    assert_eq!(sub.depot(), Some(0));
                    assert_eq!(sub.coords()[0], inst.coords()[0]);
                }
            }
            match h.high_level_instances().first() {
                Some(coarse) => {
                    assert_eq!(coarse.n(), 6);
                    let total: f64 = coarse.demands().unwrap().iter().sum();
                    let orig: f64 = inst.demands().unwrap().iter().sum();
                    assert!((total - orig).abs() < 1e-12);
                    assert!(h.degenerate().is_none());
                }
                None => assert!(h.degenerate().is_some()),
            }
        }
    }
}
