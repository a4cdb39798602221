//! Regenerate the bundled e2e fixtures.
//!
//! ```bash
//! cargo run -p skill-loom --example gen_fixtures
//! ```
//!
//! Writes fixtures/e2e/{taxonomy.json,corpus.jsonl,script.jsonl} and
//! fixtures/benchmarks/synthetic5.jsonl. Everything is a pure function of
//! the constants below, so reruns are byte-identical. The corpus is laid
//! out to exercise every filter stage:
//!
//!   P0000-P0179  clean (every 5th leads with a wrong teacher response)
//!   P0180-P0181  clean but mirrored in the benchmark (leakage drops)
//!   P0182-P0183  normalized-question duplicates of P0000/P0001
//!   P0184-P0189  only mismatching teacher responses
//!   P0190-P0195  no ground truth
//!   P0196-P0199  clean

use std::fmt::Write as _;
use std::path::PathBuf;

const CATEGORIES: [(&str, [&str; 3]); 4] = [
    (
        "Algebra",
        ["Linear equations", "Polynomial factoring", "Inequalities"],
    ),
    (
        "Geometry",
        [
            "Triangle similarity",
            "Circle theorems",
            "Coordinate geometry",
        ],
    ),
    (
        "Number theory",
        [
            "Modular arithmetic",
            "Prime factorization",
            "Divisibility rules",
        ],
    ),
    (
        "Probability",
        ["Bayes' theorem", "Counting principles", "Expected value"],
    ),
];

/// Per-category student accuracy targets, weakest last.
const CATEGORY_ACCURACY: [f64; 4] = [0.9, 0.7, 0.5, 0.25];

const N_PROBLEMS: usize = 200;
const TEACHER: &str = "deepseek-r1";

fn leaf_name(leaf: usize) -> &'static str {
    CATEGORIES[leaf / 3].1[leaf % 3]
}

fn gt(i: usize) -> u32 {
    ((i * 7 + 3) % 100) as u32
}

fn question(i: usize) -> String {
    format!("[P{i:04}] Solve task {i}: compute the quantity described in scenario {i}.")
}

fn solution(i: usize) -> String {
    format!(
        "We analyze task {i} step by step. The constraints pin the unknown down exactly.\n\nThe final answer is \\boxed{{{}}}.",
        gt(i)
    )
}

/// Leaves attributed to problem i: one always, a second for 30% of problems.
fn leaves_of(i: usize) -> Vec<usize> {
    let a = i % 12;
    let mut out = vec![a];
    if i % 10 < 3 {
        let b = (i * 5 + 3) % 12;
        if b != a {
            out.push(b);
        }
    }
    out.sort_unstable();
    out
}

/// Whether the scripted student answers problem i correctly, tuned so each
/// category lands near its target accuracy.
fn student_correct(i: usize) -> bool {
    let primary = i % 12;
    let target = CATEGORY_ACCURACY[primary / 3];
    let noise = ((i * 37 + 11) % 100) as f64 / 100.0;
    noise < target
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

fn python_list(names: &[&str]) -> String {
    let quoted: Vec<String> = names.iter().map(|n| format!("\"{n}\"")).collect();
    format!("[{}]", quoted.join(", "))
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let e2e = root.join("e2e");
    std::fs::create_dir_all(&e2e).unwrap();
    std::fs::create_dir_all(root.join("benchmarks")).unwrap();

    // Taxonomy.
    let children: Vec<serde_json::Value> = CATEGORIES
        .iter()
        .map(|(cat, leaves)| {
            serde_json::json!({
                "name": cat,
                "children": leaves.iter().map(|l| serde_json::json!({"name": l})).collect::<Vec<_>>(),
            })
        })
        .collect();
    let taxonomy = serde_json::json!({"name": "Mathematics", "children": children});
    std::fs::write(
        e2e.join("taxonomy.json"),
        serde_json::to_string_pretty(&taxonomy).unwrap() + "\n",
    )
    .unwrap();

    // Corpus.
    let mut corpus = String::new();
    for i in 0..N_PROBLEMS {
        let id = format!("P{i:04}");
        let q =
            match i {
                // Normalized duplicates of P0000/P0001.
                182 => "[p0000]  solve task 0: compute the quantity described in scenario 0."
                    .to_string(),
                183 => "[p0001] SOLVE task 1: compute the quantity described in scenario 1."
                    .to_string(),
                _ => question(i),
            };
        let ground_truth = if (190..=195).contains(&i) {
            "null".to_string()
        } else {
            json_str(&gt(i).to_string())
        };
        let mut responses: Vec<String> = Vec::new();
        let response = |generator: &str, solution: &str, answer: &str| {
            format!(
                "{{\"generator\":{},\"solution\":{},\"predicted_answer\":{}}}",
                json_str(generator),
                json_str(solution),
                json_str(answer)
            )
        };
        if (184..=189).contains(&i) {
            // Teacher never matches; a non-teacher response does.
            responses.push(response(TEACHER, &solution(i), &(gt(i) + 1).to_string()));
            responses.push(response("open-model", &solution(i), &gt(i).to_string()));
        } else {
            if i % 5 == 0 {
                responses.push(response(
                    TEACHER,
                    "A flawed path.",
                    &(gt(i) + 1).to_string(),
                ));
            }
            responses.push(response(TEACHER, &solution(i), &gt(i).to_string()));
            if i % 3 == 0 {
                responses.push(response("open-model", &solution(i), &gt(i).to_string()));
            }
        }
        writeln!(
            corpus,
            "{{\"problem_id\":{},\"question\":{},\"ground_truth\":{},\"responses\":[{}]}}",
            json_str(&id),
            json_str(&q),
            ground_truth,
            responses.join(",")
        )
        .unwrap();
    }
    std::fs::write(e2e.join("corpus.jsonl"), corpus).unwrap();

    // Benchmark: three standalone questions plus two leakage mirrors of
    // P0180/P0181 (case and whitespace variants).
    let benchmark = [
        (
            "B001",
            "[B001] Solve task 901: a warm-up in modular arithmetic.".to_string(),
            "17".to_string(),
        ),
        (
            "B002",
            "[B002] Solve task 902: a counting argument.".to_string(),
            "23".to_string(),
        ),
        (
            "B003",
            "[B003] Solve task 903: a coordinate geometry setup.".to_string(),
            "31".to_string(),
        ),
        (
            "B004",
            question(180).to_lowercase().replace("solve", "solve "),
            gt(180).to_string(),
        ),
        ("B005", question(181).to_uppercase(), gt(181).to_string()),
    ];
    let mut bench_lines = String::new();
    for (id, q, gold) in &benchmark {
        writeln!(
            bench_lines,
            "{{\"question_id\":{},\"question\":{},\"gold_answer\":{}}}",
            json_str(id),
            json_str(q),
            json_str(gold)
        )
        .unwrap();
    }
    std::fs::write(root.join("benchmarks/synthetic5.jsonl"), bench_lines).unwrap();

    // Script: benchmark answers first (their anchors can embed problem
    // markers, e.g. the uppercase leakage mirror), then per-problem
    // attribution selections and student answers.
    let mut script = String::new();
    let mut rule = |contains: &[&str], reply: &str| {
        writeln!(
            script,
            "{{\"contains\":[{}],\"reply\":{}}}",
            contains
                .iter()
                .map(|c| json_str(c))
                .collect::<Vec<_>>()
                .join(","),
            json_str(reply)
        )
        .unwrap();
    };
    for (id, q, gold) in &benchmark {
        // B002 and B005 answer incorrectly.
        let wrong = *id == "B002" || *id == "B005";
        let reply = if wrong {
            "A slip in the last step gives \\boxed{0}.".to_string()
        } else {
            format!("Carefully done: \\boxed{{{gold}}}.")
        };
        let anchor: String = q.chars().take(24).collect();
        rule(&[&anchor], &reply);
    }
    for i in 0..N_PROBLEMS {
        let marker = format!("[P{i:04}]");
        let leaves = leaves_of(i);
        let mut cats: Vec<usize> = leaves.iter().map(|l| l / 3).collect();
        cats.dedup();
        let cat_names: Vec<&str> = cats.iter().map(|&c| CATEGORIES[c].0).collect();
        rule(&[&marker, "- Algebra"], &python_list(&cat_names));
        for &cat in &cats {
            let in_cat: Vec<&str> = leaves
                .iter()
                .filter(|&&l| l / 3 == cat)
                .map(|&l| leaf_name(l))
                .collect();
            // The category prompt lists that category's leaves.
            let anchor = format!("- {}", CATEGORIES[cat].1[0]);
            rule(&[&marker, &anchor], &python_list(&in_cat));
        }
        let answer = if student_correct(i) { gt(i) } else { gt(i) + 1 };
        rule(
            &[&marker],
            &format!("Working through the steps gives \\boxed{{{answer}}}."),
        );
    }
    std::fs::write(e2e.join("script.jsonl"), script).unwrap();

    let involved: usize = (0..N_PROBLEMS).map(|i| leaves_of(i).len()).sum();
    println!(
        "wrote {} problems ({} chain slots), {} benchmark questions, taxonomy with {} leaves",
        N_PROBLEMS,
        involved,
        benchmark.len(),
        12
    );
    println!("fixtures under {}", root.display());
}
