#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use offload_core::ga::EvalSettings;
use offload_core::loop_model::{parse_source, LoopProgram};
use offload_core::measurement::simulate::simulate_with_budget;
use offload_core::measurement::DeviceProfile;
use offload_core::pattern::{Device, Gene};
use offload_core::score::fitness;
use offload_core::transfer_opt::prepare;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

const INDEX_NAMES: [&str; 3] = ["i", "j", "k"];
const ARRAYS_2D: [&str; 4] = ["a", "b", "c", "d"];
const ARRAYS_1D: [&str; 2] = ["e", "f"];
const EXTENT: i64 = 12;

#[derive(Debug, Clone)]
pub enum Sub {
    Index(usize, i64),
    Const(i64),
}

#[derive(Debug, Clone)]
pub struct Ref {
    pub name: &'static str,
    pub subs: Vec<Sub>,
}

#[derive(Debug, Clone)]
pub struct Assign {
    pub target: Ref,
    pub compound: bool,
    pub reads: Vec<Ref>,
}

#[derive(Debug, Clone)]
pub enum Stmt {
    Assign(Assign),
    Loop(GenLoop),
}

#[derive(Debug, Clone)]
pub struct GenLoop {
    pub depth: usize,
    pub trips: i64,
    pub seq: bool,
    pub ops: Option<u64>,
    pub body: Vec<Stmt>,
}

/// A randomly generated program kept in a form that can be executed
/// symbolically, independent of the crate's parser.
#[derive(Debug, Clone)]
pub struct GenProgram {
    pub loops: Vec<GenLoop>,
}

fn gen_ref(rng: &mut ChaCha8Rng, depth: usize, allow_scalar: bool) -> Ref {
    if allow_scalar && rng.gen_bool(0.05) {
        return Ref { name: "s", subs: Vec::new() };
    }
    let two_d = rng.gen_bool(0.7);
    let name = if two_d {
        ARRAYS_2D[rng.gen_range(0..ARRAYS_2D.len())]
    } else {
        ARRAYS_1D[rng.gen_range(0..ARRAYS_1D.len())]
    };
    let dims = if two_d { 2 } else { 1 };
    let subs = (0..dims)
        .map(|_| {
            if rng.gen_bool(0.75) {
                let offset = [-1, 0, 0, 0, 1][rng.gen_range(0..5)];
                Sub::Index(rng.gen_range(0..=depth), offset)
            } else {
                Sub::Const(rng.gen_range(0..4))
            }
        })
        .collect();
    Ref { name, subs }
}

fn aligned_ref(rng: &mut ChaCha8Rng, depth: usize) -> Ref {
    if rng.gen_bool(0.7) {
        let name = ARRAYS_2D[rng.gen_range(0..ARRAYS_2D.len())];
        let outer = rng.gen_range(0..=depth);
        let subs = if rng.gen_bool(0.5) {
            vec![Sub::Index(outer, 0), Sub::Index(depth, 0)]
        } else {
            vec![Sub::Index(depth, 0), Sub::Index(outer, 0)]
        };
        Ref { name, subs }
    } else {
        let name = ARRAYS_1D[rng.gen_range(0..ARRAYS_1D.len())];
        Ref { name, subs: vec![Sub::Index(depth, 0)] }
    }
}

fn gen_assign(rng: &mut ChaCha8Rng, depth: usize) -> Assign {
    if rng.gen_bool(0.5) {
        // Element-wise update: the target follows the innermost index.
        let target = aligned_ref(rng, depth);
        let reads = (0..rng.gen_range(1..=3))
            .map(|_| if rng.gen_bool(0.7) { aligned_ref(rng, depth) } else { gen_ref(rng, depth, false) })
            .collect();
        return Assign { target, compound: rng.gen_bool(0.1), reads };
    }
    let target = gen_ref(rng, depth, true);
    let compound = target.subs.is_empty() || rng.gen_bool(0.1);
    let reads = (0..rng.gen_range(1..=3)).map(|_| gen_ref(rng, depth, true)).collect();
    Assign { target, compound, reads }
}

fn gen_loop(rng: &mut ChaCha8Rng, depth: usize) -> GenLoop {
    let children = if depth < 2 { rng.gen_range(0..=2) } else { 0 };
    let stmts = if children == 0 { rng.gen_range(1..=2) } else { rng.gen_range(0..=1) };
    let mut body: Vec<Stmt> = (0..stmts).map(|_| Stmt::Assign(gen_assign(rng, depth))).collect();
    for _ in 0..children {
        let pos = rng.gen_range(0..=body.len());
        body.insert(pos, Stmt::Loop(gen_loop(rng, depth + 1)));
    }
    GenLoop {
        depth,
        trips: rng.gen_range(1..=6),
        seq: rng.gen_bool(0.08),
        ops: rng.gen_bool(0.2).then(|| rng.gen_range(1..50)),
        body,
    }
}

impl GenProgram {
    pub fn generate(rng: &mut ChaCha8Rng) -> Self {
        let n = rng.gen_range(1..=5);
        Self {
            loops: (0..n).map(|_| gen_loop(rng, 0)).collect(),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in ARRAYS_2D {
            out.push_str(&format!("float {a}[{EXTENT}][{EXTENT}];\n"));
        }
        for a in ARRAYS_1D {
            out.push_str(&format!("float {a}[{EXTENT}];\n"));
        }
        out.push_str("double s;\n\n");
        for lp in &self.loops {
            render_loop(lp, &mut out);
        }
        out
    }

    /// Loops in document order, matching the ids the parser assigns.
    pub fn preorder(&self) -> Vec<&GenLoop> {
        fn walk<'a>(lp: &'a GenLoop, out: &mut Vec<&'a GenLoop>) {
            out.push(lp);
            for s in &lp.body {
                if let Stmt::Loop(c) = s {
                    walk(c, out);
                }
            }
        }
        let mut out = Vec::new();
        self.loops.iter().for_each(|l| walk(l, &mut out));
        out
    }

    /// Ground truth by execution: loop `id` is dependence-free when, on every
    /// entry, no element written in one iteration is touched in another.
    pub fn executes_independently(&self, id: usize) -> bool {
        let target = self.preorder()[id] as *const GenLoop;
        let mut free = true;
        let mut env = [0i64; 3];
        for lp in &self.loops {
            find_entries(lp, target, &mut env, &mut free);
        }
        free
    }
}

fn render_ref(r: &Ref) -> String {
    let mut s = r.name.to_string();
    for sub in &r.subs {
        match sub {
            Sub::Index(d, 0) => s.push_str(&format!("[{}]", INDEX_NAMES[*d])),
            Sub::Index(d, o) if *o > 0 => s.push_str(&format!("[{} + {o}]", INDEX_NAMES[*d])),
            Sub::Index(d, o) => s.push_str(&format!("[{} - {}]", INDEX_NAMES[*d], -o)),
            Sub::Const(c) => s.push_str(&format!("[{c}]")),
        }
    }
    s
}

fn render_loop(lp: &GenLoop, out: &mut String) {
    let pad = "  ".repeat(lp.depth);
    if lp.seq {
        out.push_str(&format!("{pad}//@seq\n"));
    }
    if let Some(ops) = lp.ops {
        out.push_str(&format!("{pad}//@ops({ops})\n"));
    }
    let idx = INDEX_NAMES[lp.depth];
    out.push_str(&format!("{pad}for ({idx} = 1; {idx} < {}; {idx}++) {{\n", 1 + lp.trips));
    for s in &lp.body {
        match s {
            Stmt::Loop(c) => render_loop(c, out),
            Stmt::Assign(a) => {
                let rhs: Vec<String> = a.reads.iter().map(render_ref).collect();
                let op = if a.compound { "+=" } else { "=" };
                out.push_str(&format!(
                    "{pad}  {} {op} {} * 0.5;\n",
                    render_ref(&a.target),
                    rhs.join(" + ")
                ));
            }
        }
    }
    out.push_str(&format!("{pad}}}\n"));
}

type Element = (&'static str, Vec<i64>);

fn element(r: &Ref, env: &[i64; 3]) -> Element {
    let idx = r
        .subs
        .iter()
        .map(|s| match s {
            Sub::Index(d, o) => env[*d] + o,
            Sub::Const(c) => *c,
        })
        .collect();
    (r.name, idx)
}

fn collect_accesses(lp: &GenLoop, env: &mut [i64; 3], out: &mut Vec<(Element, bool)>) {
    for it in 0..lp.trips {
        env[lp.depth] = 1 + it;
        body_accesses(&lp.body, env, out);
    }
}

fn body_accesses(body: &[Stmt], env: &mut [i64; 3], out: &mut Vec<(Element, bool)>) {
    for s in body {
        match s {
            Stmt::Loop(c) => collect_accesses(c, env, out),
            Stmt::Assign(a) => {
                for r in &a.reads {
                    out.push((element(r, env), false));
                }
                if a.compound {
                    out.push((element(&a.target, env), false));
                }
                out.push((element(&a.target, env), true));
            }
        }
    }
}

fn find_entries(lp: &GenLoop, target: *const GenLoop, env: &mut [i64; 3], free: &mut bool) {
    if std::ptr::eq(lp, target) {
        let mut touched: HashMap<Element, (BTreeSet<i64>, bool)> = HashMap::new();
        for it in 0..lp.trips {
            env[lp.depth] = 1 + it;
            let mut acc = Vec::new();
            body_accesses(&lp.body, env, &mut acc);
            for (el, write) in acc {
                let entry = touched.entry(el).or_default();
                entry.0.insert(it);
                entry.1 |= write;
            }
        }
        if touched.values().any(|(iters, written)| *written && iters.len() > 1) {
            *free = false;
        }
        return;
    }
    for it in 0..lp.trips {
        env[lp.depth] = 1 + it;
        for s in &lp.body {
            if let Stmt::Loop(c) = s {
                find_entries(c, target, env, free);
            }
        }
    }
}

/// A generated program with between `min` and `max` parallelizable loops,
/// along with its parsed form.
pub fn random_program_in(seed: u64, min: usize, max: usize) -> (GenProgram, LoopProgram) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let generated = GenProgram::generate(&mut rng);
        let program = parse_source(&generated.render()).unwrap_or_else(|e| {
            panic!("generated program does not parse: {e}\n{}", generated.render())
        });
        let n = program.parallelizable_ids().len();
        if (min..=max).contains(&n) {
            return (generated, program);
        }
    }
}

/// A generated program with between one and `max_parallel` parallelizable
/// loops.
pub fn random_program(seed: u64, max_parallel: usize) -> (GenProgram, LoopProgram) {
    random_program_in(seed, 1, max_parallel)
}

/// A profile whose all-CPU run takes between 20 and 120 seconds.
pub fn random_profile(program: &LoopProgram, device: Device, rng: &mut ChaCha8Rng) -> DeviceProfile {
    let work: f64 = program
        .loops()
        .iter()
        .map(|l| (program.entry_count(l.id) * l.trip_count) as f64 * (l.ops_per_iter as f64 + l.bytes_per_iter as f64 / 4.0))
        .sum::<f64>()
        .max(1.0);
    let overhead_s = rng.gen_range(0.5..3.0);
    let cpu_s = rng.gen_range(20.0..120.0);
    let rate = work / cpu_s;
    DeviceProfile {
        device,
        loop_speedup: program
            .loops()
            .iter()
            .map(|l| (l.id, rng.gen_range(0.3..20.0)))
            .collect(),
        default_speedup: 1.0,
        cpu_ops_per_s: rate,
        cpu_bytes_per_s: Some(rate * 4.0),
        transfer_cost_s: if device == Device::ManyCore { 0.0 } else { rng.gen_range(0.0..0.5) },
        base_watts: rng.gen_range(5.0..40.0),
        active_watts: rng.gen_range(10.0..120.0),
        cpu_watts: rng.gen_range(20.0..40.0),
        overhead_s,
    }
}

/// Fitness of one gene under the simulated model, computed the same way a
/// search measures it.
pub fn model_fitness(
    program: &LoopProgram,
    profile: &DeviceProfile,
    settings: &EvalSettings,
    gene: &Gene,
) -> f64 {
    let (pattern, _) = prepare(program, gene, profile.device, settings.hoist_transfers).unwrap();
    let result = simulate_with_budget(program, &pattern, profile, settings.budget_s);
    fitness(&result, &settings.score).unwrap()
}

/// Exhaustive enumeration of every pattern: the optimum fitness and one gene
/// that reaches it.
pub fn brute_force_optimum(
    program: &LoopProgram,
    profile: &DeviceProfile,
    settings: &EvalSettings,
) -> (f64, Gene) {
    let n = program.parallelizable_ids().len();
    (0..1u64 << n)
        .map(|i| {
            let g = Gene::from_index(i, n);
            (model_fitness(program, profile, settings, &g), g)
        })
        .fold((f64::NEG_INFINITY, Gene::zeros(n)), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        })
}
