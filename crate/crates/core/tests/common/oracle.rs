//! Exhaustive breadth-first search over sets of atoms, and a generator of
//! small random office worlds to compare the planner against.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use icps::atom::Atom;
use icps::entity::{EntityDescriptor, EntityKind, EntityManager, LivenessConfig};
use icps::knowledge::{Fact, FreshnessWindows, KnowledgeStore};
use icps::planner::{
    goal_with_release, ground_domain, initial_state, search, validate_plan, GroundAction, Plan, DEFAULT_STATE_LIMIT,
};
use icps::site::{SiteMap, Timing};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MAX_DEPTH: usize = 8;
pub const ORACLE_STATE_CAP: usize = 400_000;

/// Length of a shortest plan, if one of at most `max_depth` steps exists.
/// `Err` when the state cap is hit before an answer. States are sorted
/// lists of interned atom ids.
pub fn oracle(
    init: &BTreeSet<Atom>,
    goal: &BTreeSet<Atom>,
    actions: &[GroundAction],
    max_depth: usize,
) -> Result<Option<usize>, ()> {
    let mut ids: HashMap<Atom, u32> = HashMap::new();
    let mut set = |atoms: &BTreeSet<Atom>| -> Vec<u32> {
        let mut v: Vec<u32> = atoms
            .iter()
            .map(|a| {
                let n = ids.len() as u32;
                *ids.entry(a.clone()).or_insert(n)
            })
            .collect();
        v.sort_unstable();
        v
    };
    let start = set(init);
    let goal = set(goal);
    let acts: Vec<(Vec<u32>, Vec<u32>, Vec<u32>)> = actions
        .iter()
        .map(|a| (set(&a.preconds), set(&a.deletes), set(&a.adds)))
        .collect();
    let subset = |small: &[u32], big: &[u32]| small.iter().all(|x| big.binary_search(x).is_ok());

    if subset(&goal, &start) {
        return Ok(Some(0));
    }
    let mut seen: HashSet<Vec<u32>> = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((state, depth)) = queue.pop_front() {
        if depth == max_depth {
            continue;
        }
        for (pre, del, add) in &acts {
            if !subset(pre, &state) {
                continue;
            }
            let mut next: Vec<u32> = state.iter().copied().filter(|x| del.binary_search(x).is_err()).collect();
            next.extend(add.iter().copied());
            next.sort_unstable();
            next.dedup();
            if subset(&goal, &next) {
                return Ok(Some(depth + 1));
            }
            if !seen.contains(&next) {
                if seen.len() >= ORACLE_STATE_CAP {
                    return Err(());
                }
                seen.insert(next.clone());
                queue.push_back((next, depth + 1));
            }
        }
    }
    Ok(None)
}

pub struct Instance {
    pub init: BTreeSet<Atom>,
    pub goal: BTreeSet<Atom>,
    pub actions: Vec<GroundAction>,
}

fn name(prefix: &str, i: usize) -> String {
    format!("{prefix}{i}")
}

pub fn generate(rng: &mut ChaCha8Rng) -> Instance {
    let n_rooms = rng.random_range(2..=5);
    let rooms: Vec<String> = (0..n_rooms).map(|i| name("room", i)).collect();
    let mut site = SiteMap::new(Timing::default());
    for i in 1..n_rooms {
        let j = rng.random_range(0..i);
        site.add_edge(&rooms[i], &rooms[j], rng.random_range(1..=4) * 5_000);
    }
    if n_rooms > 2 && rng.random_bool(0.5) {
        site.add_edge(&rooms[0], &rooms[n_rooms - 1], 20_000);
    }

    let mut entities = EntityManager::new(LivenessConfig::default());
    let n_entities = rng.random_range(1..=3);
    for i in 0..n_entities {
        let kind = if i == 0 {
            EntityKind::MobileRobot
        } else {
            *[EntityKind::MobileRobot, EntityKind::SmartLobby, EntityKind::Receptionist]
                .choose(rng)
                .unwrap()
        };
        let d = EntityDescriptor {
            entity_id: name("bot", i),
            kind,
            location: rooms.choose(rng).unwrap().clone(),
            capabilities: kind.default_capabilities(),
            voice_label: String::new(),
        };
        entities.register(d, 0).unwrap();
    }

    let mut k = KnowledgeStore::new(FreshnessWindows::default());
    let mut put = |atom: Atom| k.assert_fact(Fact::asserted(atom, 0, "gen")).unwrap();
    let n_storages = rng.random_range(1..=2);
    let storages: Vec<String> = (0..n_storages).map(|i| name("box", i)).collect();
    for s in &storages {
        put(Atom::storage_at(s, rooms.choose(rng).unwrap()));
    }
    let n_objects = rng.random_range(1..=3);
    let objects: Vec<String> = (0..n_objects).map(|i| name("thing", i)).collect();
    for o in &objects {
        put(Atom::stored(o, storages.choose(rng).unwrap()));
    }
    let n_persons = rng.random_range(1..=4);
    let persons: Vec<String> = (0..n_persons).map(|i| name("person", i)).collect();
    for p in &persons {
        put(Atom::person_at(p, rooms.choose(rng).unwrap()));
        for s in &storages {
            if rng.random_bool(0.4) {
                put(Atom::can_open(p, s));
            }
        }
        if rng.random_bool(0.3) {
            put(Atom::registered_person(p));
        }
    }

    let mut goal = BTreeSet::new();
    for _ in 0..rng.random_range(1..=2) {
        let atom = match rng.random_range(0..4) {
            0 | 1 => Atom::holding(persons.choose(rng).unwrap(), objects.choose(rng).unwrap()),
            2 => Atom::person_at(persons.choose(rng).unwrap(), rooms.choose(rng).unwrap()),
            _ => Atom::at(&name("bot", 0), rooms.choose(rng).unwrap()),
        };
        goal.insert(atom);
    }

    let snapshot = k.snapshot(1_000);
    let avail: Vec<_> = entities.records().collect();
    Instance {
        init: initial_state(&snapshot, &avail, &BTreeSet::new(), &BTreeSet::new()),
        goal: goal_with_release(&goal, &avail),
        actions: ground_domain(&snapshot, &avail, &site),
    }
}


#[derive(Debug, Default)]
pub struct Agreement {
    pub compared: usize,
    /// Instances whose optimum is four steps or more.
    pub nontrivial: usize,
    pub attempts: usize,
    pub longest: usize,
}

/// Draws instances until `wanted` solvable ones have been checked against
/// the oracle: equal length, and the plan replays to the goal.
pub fn compare_with_oracle(seed: u64, wanted: usize) -> Result<Agreement, String> {
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut stats = Agreement::default();
    while stats.compared < wanted {
        stats.attempts += 1;
        if stats.attempts > 50 * wanted {
            return Err(format!("only {} solvable instances in {} draws", stats.compared, stats.attempts));
        }
        let inst = generate(&mut rng);
        let Ok(Some(optimum)) = oracle(&inst.init, &inst.goal, &inst.actions, MAX_DEPTH) else {
            continue;
        };
        let steps = search(&inst.init, &inst.goal, &inst.actions, DEFAULT_STATE_LIMIT)
            .map_err(|e| format!("draw {}: planner failed where the oracle found {optimum} steps: {e}", stats.attempts))?;
        if steps.len() != optimum {
            return Err(format!(
                "draw {}: planner returned {} steps, optimum is {optimum}, goal {:?}",
                stats.attempts,
                steps.len(),
                inst.goal
            ));
        }
        let plan = Plan {
            request_id: String::new(),
            goal: inst.goal.clone(),
            steps,
            created_at: 0,
            planning_ms: 0,
        };
        validate_plan(&plan, &inst.init).map_err(|e| format!("draw {}: plan does not replay: {e}", stats.attempts))?;
        stats.compared += 1;
        stats.longest = stats.longest.max(optimum);
        if optimum >= 4 {
            stats.nontrivial += 1;
        }
    }
    Ok(stats)
}
