mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use cellflow::executor::{ExecError, RunOptions};
use cellflow::{
    build_graph, define_hierarchy, CellId, Concurrency, DataProduct, DatasetEvent, InputSpec, OperatorError,
    OutputSpec, Pipeline, PipelineGraph, SourceSpec,
};
use common::*;

fn weighted_graph() -> PipelineGraph<i64> {
    let mut p = Pipeline::new(art());
    p.register_transform(
        "f",
        |xs: &[&i64]| Ok(vec![*xs[0] * 2]),
        vec![InputSpec::new("a", "event", "int")],
        vec![OutputSpec::new("b", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_fold(
        "g",
        |acc, xs: &[&i64]| Ok(acc + *xs[0]),
        0,
        vec![InputSpec::new("c", "event", "int")],
        OutputSpec::new("J", "int"),
        "subrun",
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_fold(
        "h",
        |acc, xs: &[&i64]| Ok(acc + *xs[0] * *xs[1]),
        0,
        vec![
            InputSpec::new("J", "subrun", "int"),
            InputSpec::new("K", "subrun", "int"),
        ],
        OutputSpec::new("W", "int"),
        "run",
        Concurrency::Unlimited,
    )
    .unwrap();
    let sources = vec![
        SourceSpec::new("a", "event", "int"),
        SourceSpec::new("c", "event", "int"),
        SourceSpec::new("K", "subrun", "int"),
    ];
    build_graph(p, sources).unwrap()
}

/// Weighted-sum dataset: a = c = 1..4 over the events, K = 10, 20 per subrun.
fn weighted_events() -> Vec<DatasetEvent<i64>> {
    let h = art();
    art_events(&h, &[vec![2, 2]], |c| match c.level().as_str() {
        "event" => {
            let sub = c.ancestor("subrun").unwrap().index() as i64;
            let v = (sub - 1) * 2 + c.index() as i64;
            vec![product("a", c, "int", v), product("c", c, "int", v)]
        }
        "subrun" => vec![product("K", c, "int", c.index() as i64 * 10)],
        _ => vec![],
    })
}

fn values(records: &[Record<i64>], label: &str) -> Vec<i64> {
    records.iter().filter(|r| r.1 == label).map(|r| r.2).collect()
}

#[test]
fn weighted_example_values() {
    let g = weighted_graph();
    let events = weighted_events();
    for width in [1, 2, 8] {
        let (products, report) = execute(&g, &events, &RunOptions::with_width(width)).unwrap();
        let recs = records(products);
        assert_eq!(values(&recs, "b"), vec![2, 4, 6, 8]);
        assert_eq!(values(&recs, "J"), vec![3, 7]);
        assert_eq!(values(&recs, "W"), vec![170]);
        assert_eq!(
            report.summary.render(),
            "job: 1\n  run: 1\n    subrun: 2\n      event: 4\n"
        );
        assert_eq!(report.node("f").unwrap().invocations, 4);
        assert_eq!(report.node("h").unwrap().invocations, 2);
        assert_eq!(recs, reference(&g, &events).persisted);
    }
}

#[test]
fn fold_results_are_attached_to_subruns() {
    let g = weighted_graph();
    let recs = execute_records(&g, &weighted_events(), 4);
    let j: Vec<String> = recs
        .iter()
        .filter(|r| r.1 == "J")
        .map(|r| r.0.relative_path())
        .collect();
    assert_eq!(j, vec!["run:1/subrun:1", "run:1/subrun:2"]);
}

#[test]
fn only_transform_gives_one_b_per_event() {
    let mut p = Pipeline::new(art());
    p.register_transform(
        "f",
        |xs: &[&i64]| Ok(vec![*xs[0] * 2]),
        vec![InputSpec::new("a", "event", "int")],
        vec![OutputSpec::new("b", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(
        p,
        vec![
            SourceSpec::new("a", "event", "int").transient(),
            SourceSpec::new("c", "event", "int").transient(),
            SourceSpec::new("K", "subrun", "int").transient(),
        ],
    )
    .unwrap();
    let recs = execute_records(&g, &weighted_events(), 8);
    assert_eq!(recs.len(), 4);
    assert!(recs.iter().all(|r| r.1 == "b" && r.0.level().as_str() == "event"));
}

#[test]
fn run_product_is_broadcast_to_events() {
    let h = art();
    let mut p = Pipeline::new(h.clone());
    p.register_transform(
        "make_tracks",
        |xs: &[&i64]| Ok(vec![*xs[0] + *xs[1]]),
        vec![
            InputSpec::new("GoodHits", "event", "int"),
            InputSpec::new("CalibrationEntry", "run", "int"),
        ],
        vec![OutputSpec::new("GoodTracks", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(
        p,
        vec![
            SourceSpec::new("GoodHits", "event", "int").transient(),
            SourceSpec::new("CalibrationEntry", "run", "int").transient(),
        ],
    )
    .unwrap();
    let events = art_events(&h, &[vec![5, 5]], |c| match c.level().as_str() {
        "event" => vec![product("GoodHits", c, "int", c.index() as i64)],
        "run" => vec![product("CalibrationEntry", c, "int", 1000)],
        _ => vec![],
    });
    let recs = execute_records(&g, &events, 8);
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r.2 > 1000));
}

#[test]
fn product_arriving_after_children_still_reaches_them() {
    // The run product is streamed after the run's events have begun.
    let h = art();
    let mut p = Pipeline::new(h.clone());
    p.register_transform(
        "t",
        |xs: &[&i64]| Ok(vec![*xs[0] + *xs[1]]),
        vec![InputSpec::new("x", "event", "int"), InputSpec::new("R", "run", "int")],
        vec![OutputSpec::new("y", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(
        p,
        vec![
            SourceSpec::new("x", "event", "int").transient(),
            SourceSpec::new("R", "run", "int").transient(),
        ],
    )
    .unwrap();
    let mut events = art_events(&h, &[vec![3]], |c| match c.level().as_str() {
        "event" => vec![product("x", c, "int", 1)],
        _ => vec![],
    });
    let run = h.parse_cell("run:1").unwrap();
    let end_sub = events
        .iter()
        .position(|e| matches!(e, DatasetEvent::End(c) if c.level().as_str() == "subrun"))
        .unwrap();
    events.insert(end_sub, DatasetEvent::Product(product("R", &run, "int", 41)));
    assert_eq!(values(&execute_records(&g, &events, 4), "y"), vec![42, 42, 42]);
}

#[test]
fn filtered_events_skip_downstream_and_fold() {
    let h = art();
    let mut p = Pipeline::new(h.clone());
    p.register_filter(
        "even",
        |xs: &[&i64]| Ok(*xs[0] % 2 == 0),
        vec![InputSpec::new("a", "event", "int")],
        vec![OutputSpec::new("a_even", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_transform(
        "neg",
        |xs: &[&i64]| Ok(vec![-*xs[0]]),
        vec![InputSpec::new("a_even", "event", "int")],
        vec![OutputSpec::temporary("n", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_fold(
        "total",
        |acc, xs: &[&i64]| Ok(acc + *xs[0]),
        0,
        vec![InputSpec::new("n", "event", "int")],
        OutputSpec::new("T", "int"),
        "run",
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(
        p,
        vec![
            SourceSpec::new("a", "event", "int"),
            SourceSpec::new("c", "event", "int").transient(),
            SourceSpec::new("K", "subrun", "int").transient(),
        ],
    )
    .unwrap();
    let events = weighted_events();
    for width in [1, 8] {
        let (products, report) = execute(&g, &events, &RunOptions::with_width(width)).unwrap();
        let recs = records(products.clone());
        assert_eq!(values(&recs, "a_even"), vec![2, 4]);
        assert_eq!(values(&recs, "T"), vec![-6]);
        assert_eq!(report.node("neg").unwrap().invocations, 2);
        // Pass-through shares the payload with the accepted input.
        for pass in products.iter().filter(|p| p.label.as_str() == "a_even") {
            let input = products
                .iter()
                .find(|p| p.label.as_str() == "a" && p.cell == pass.cell)
                .unwrap();
            assert!(Arc::ptr_eq(&pass.value, &input.value));
        }
    }
}

#[test]
fn unfold_then_count() {
    let h = define_hierarchy(&[("run", "job"), ("slice", "run")]).unwrap();
    let mut p = Pipeline::new(h.clone());
    p.register_unfold(
        "split",
        |n: i64| Ok((n > 0).then(|| (vec![n * 10], n - 1))),
        InputSpec::new("n", "run", "int"),
        "slice",
        vec![OutputSpec::new("piece", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_fold(
        "count",
        |acc, _: &[&i64]| Ok(acc + 1),
        0,
        vec![InputSpec::new("piece", "slice", "int")],
        OutputSpec::new("pieces", "int"),
        "run",
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("n", "run", "int")]).unwrap();
    let events = flat_events(&h, "run", 3, |c| vec![product("n", c, "int", c.index() as i64 * 2)]);
    let (products, report) = execute(&g, &events, &RunOptions::with_width(4)).unwrap();
    let recs = records(products);
    assert_eq!(values(&recs, "pieces"), vec![2, 4, 6]);
    assert_eq!(report.summary.count("slice"), Some(12));
    let first_run: Vec<i64> = recs
        .iter()
        .filter(|r| r.1 == "piece" && r.0.ancestor("run").unwrap().index() == 1)
        .map(|r| r.2)
        .collect();
    assert_eq!(first_run, vec![20, 10]);
    assert_eq!(recs, reference(&g, &events).persisted);
}

#[test]
fn serial_node_never_overlaps() {
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let mut p = Pipeline::new(h.clone());
    let slow = |xs: &[&i64]| {
        std::thread::sleep(Duration::from_millis(2));
        Ok(vec![*xs[0]])
    };
    p.register_transform(
        "serial",
        slow,
        vec![InputSpec::new("x", "event", "int")],
        vec![OutputSpec::new("y", "int")],
        Concurrency::serial(),
    )
    .unwrap();
    p.register_transform(
        "pair",
        slow,
        vec![InputSpec::new("x", "event", "int")],
        vec![OutputSpec::new("z", "int")],
        Concurrency::bounded(2).unwrap(),
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("x", "event", "int")]).unwrap();
    let events = flat_events(&h, "event", 30, |c| vec![product("x", c, "int", c.index() as i64)]);
    let (_, report) = execute(&g, &events, &RunOptions::with_width(8)).unwrap();
    let serial = report.node("serial").unwrap();
    assert_eq!(serial.invocations, 30);
    assert_eq!(serial.max_in_flight, 1);
    assert!(report.node("pair").unwrap().max_in_flight <= 2);
}

#[test]
fn throttled_source_bounds_open_cells() {
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let mut p = Pipeline::new(h.clone());
    p.register_fold(
        "sum",
        |acc, xs: &[&i64]| Ok(acc + *xs[0]),
        0,
        vec![InputSpec::new("x", "event", "int")],
        OutputSpec::new("S", "int"),
        "job",
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("x", "event", "int").transient()]).unwrap();
    let events = flat_events(&h, "event", 1000, |c| vec![product("x", c, "int", c.index() as i64)]);
    let opts = RunOptions {
        max_inflight_cells: 2,
        ..RunOptions::with_width(4)
    };
    let (products, report) = execute(&g, &events, &opts).unwrap();
    assert_eq!(values(&records(products), "S"), vec![500_500]);
    assert!(report.peak_open_cells["event"] <= 2, "{:?}", report.peak_open_cells);
}

#[test]
fn throttling_does_not_deadlock_on_enclosing_fold() {
    // Every event needs the job-level fold over all events: the source has
    // to keep reading beyond the in-flight limit.
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let mut p = Pipeline::new(h.clone());
    p.register_fold(
        "sum",
        |acc, xs: &[&i64]| Ok(acc + *xs[0]),
        0,
        vec![InputSpec::new("x", "event", "int")],
        OutputSpec::new("S", "int"),
        "job",
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_transform(
        "frac",
        |xs: &[&i64]| Ok(vec![*xs[0] * 100 / *xs[1]]),
        vec![InputSpec::new("x", "event", "int"), InputSpec::new("S", "job", "int")],
        vec![OutputSpec::new("pct", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("x", "event", "int").transient()]).unwrap();
    let events = flat_events(&h, "event", 20, |_| vec![product("x", &h.job_cell(), "int", 0)]);
    // Products must live on their own cell.
    let events: Vec<_> = events
        .into_iter()
        .scan(None::<CellId>, |cur, e| {
            Some(match e {
                DatasetEvent::Begin(c) => {
                    *cur = Some(c.clone());
                    DatasetEvent::Begin(c)
                }
                DatasetEvent::Product(_) => {
                    let c = cur.clone().unwrap();
                    DatasetEvent::Product(product("x", &c, "int", 5))
                }
                other => other,
            })
        })
        .collect();
    let opts = RunOptions {
        max_inflight_cells: 2,
        ..RunOptions::with_width(2)
    };
    let recs = records(execute(&g, &events, &opts).unwrap().0);
    assert_eq!(values(&recs, "S"), vec![100]);
    assert_eq!(values(&recs, "pct"), vec![5; 20]);
}

#[test]
fn jittered_runs_match() {
    let g = weighted_graph();
    let events = weighted_events();
    let expected = reference(&g, &events).persisted;
    for seed in 0..10 {
        let recs = records(execute(&g, &events, &options(8, Some(seed))).unwrap().0);
        assert_eq!(recs, expected, "seed {seed}");
    }
}

#[test]
fn trace_orders_dependent_invocations() {
    let h = art();
    let mut p = Pipeline::new(h.clone());
    p.register_transform(
        "make_offset",
        |xs: &[&i64]| {
            std::thread::sleep(Duration::from_millis(3));
            Ok(vec![*xs[0] + 1])
        },
        vec![InputSpec::new("CalibrationEntry", "run", "int")],
        vec![OutputSpec::temporary("CalibrationOffset", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    p.register_transform(
        "make_tracks",
        |xs: &[&i64]| Ok(vec![*xs[0] + *xs[1]]),
        vec![
            InputSpec::new("GoodHits", "event", "int"),
            InputSpec::new("CalibrationOffset", "run", "int"),
        ],
        vec![OutputSpec::new("GoodTracks", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(
        p,
        vec![
            SourceSpec::new("CalibrationEntry", "run", "int"),
            SourceSpec::new("GoodHits", "event", "int"),
        ],
    )
    .unwrap();
    let events = art_events(&h, &[vec![3, 2], vec![4]], |c| match c.level().as_str() {
        "event" => vec![product("GoodHits", c, "int", 1)],
        "run" => vec![product("CalibrationEntry", c, "int", c.index() as i64 * 100)],
        _ => vec![],
    });
    let opts = RunOptions {
        trace: true,
        ..RunOptions::with_width(8)
    };
    let (products, report) = execute(&g, &events, &opts).unwrap();
    assert!(products.iter().all(|p| p.label.as_str() != "CalibrationOffset"));
    assert_eq!(products.iter().filter(|p| p.label.as_str() == "GoodTracks").count(), 9);
    for offset in report.trace.iter().filter(|t| t.node == "make_offset") {
        let tracks: Vec<_> = report
            .trace
            .iter()
            .filter(|t| t.node == "make_tracks" && t.cell.is_descendant_of(&offset.cell))
            .collect();
        assert!(!tracks.is_empty());
        assert!(tracks.iter().all(|t| t.start >= offset.end));
    }
}

// -- error paths --------------------------------------------------------------

fn single_transform<F>(f: F) -> PipelineGraph<i64>
where
    F: Fn(&[&i64]) -> Result<Vec<i64>, OperatorError> + Send + Sync + 'static,
{
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let mut p = Pipeline::new(h);
    p.register_transform(
        "t",
        f,
        vec![InputSpec::new("x", "event", "int")],
        vec![OutputSpec::new("y", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    build_graph(p, vec![SourceSpec::new("x", "event", "int")]).unwrap()
}

fn x_events(n: usize) -> Vec<DatasetEvent<i64>> {
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    flat_events(&h, "event", n, |c| vec![product("x", c, "int", c.index() as i64)])
}

#[test]
fn operator_error_is_reported() {
    let g = single_transform(|xs| {
        if *xs[0] == 3 {
            Err(OperatorError::new("bad input"))
        } else {
            Ok(vec![*xs[0]])
        }
    });
    let err = execute(&g, &x_events(5), &RunOptions::with_width(4)).unwrap_err();
    match err {
        ExecError::OperatorFailure { node, cell, message } => {
            assert_eq!(node, "t");
            assert_eq!(cell, "job:0/event:3");
            assert_eq!(message, "bad input");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn operator_panic_is_contained() {
    let g = single_transform(|xs| {
        if *xs[0] == 2 {
            panic!("boom");
        }
        Ok(vec![*xs[0]])
    });
    let err = execute(&g, &x_events(4), &RunOptions::with_width(2)).unwrap_err();
    assert!(
        matches!(err, ExecError::OperatorFailure { ref message, .. } if message.contains("boom")),
        "{err:?}"
    );
}

#[test]
fn missing_source_product() {
    let g = weighted_graph();
    let events: Vec<_> = weighted_events()
        .into_iter()
        .filter(|e| !matches!(e, DatasetEvent::Product(p) if p.label.as_str() == "K" && p.cell.index() == 2))
        .collect();
    let err = execute(&g, &events, &RunOptions::with_width(4)).unwrap_err();
    match err {
        ExecError::MissingInput { node, label, cell } => {
            assert_eq!((node.as_str(), label.as_str()), ("h", "K"));
            assert_eq!(cell, "job:0/run:1/subrun:2");
        }
        other => panic!("unexpected {other:?}"),
    }
}

fn malformed(events: Vec<DatasetEvent<i64>>) -> String {
    let g = single_transform(|xs| Ok(vec![*xs[0]]));
    match execute(&g, &events, &RunOptions::with_width(2)) {
        Err(ExecError::MalformedSource(m)) => m.detail,
        other => panic!("expected a malformed source, got {other:?}"),
    }
}

#[test]
fn malformed_sources() {
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let job = h.job_cell();
    let e1 = h.parse_cell("event:1").unwrap();
    let x = |c: &CellId| DatasetEvent::Product(product("x", c, "int", 1));
    use DatasetEvent::{Begin, End};

    malformed(vec![Begin(e1.clone())]);
    malformed(vec![Begin(job.clone()), End(job.clone()), Begin(e1.clone())]);
    malformed(vec![
        Begin(job.clone()),
        Begin(e1.clone()),
        x(&e1),
        x(&e1),
        End(e1.clone()),
        End(job.clone()),
    ]);
    malformed(vec![Begin(job.clone()), Begin(e1.clone()), End(job.clone())]);
    malformed(vec![
        Begin(job.clone()),
        Begin(e1.clone()),
        x(&e1),
        End(e1.clone()),
        End(e1.clone()),
        End(job.clone()),
    ]);
    malformed(vec![Begin(job.clone()), Begin(e1.clone()), Begin(e1.clone())]);
    malformed(vec![Begin(job.clone()), Begin(e1.clone()), x(&e1), End(e1.clone())]);
    malformed(vec![Begin(job.clone()), x(&job), End(job.clone())]);
    malformed(vec![
        Begin(job.clone()),
        Begin(e1.clone()),
        DatasetEvent::Product(product("zz", &e1, "int", 1)),
        End(e1.clone()),
        End(job.clone()),
    ]);
    malformed(vec![
        Begin(job.clone()),
        Begin(e1.clone()),
        DatasetEvent::Product(product("x", &e1, "float", 1)),
        End(e1.clone()),
        End(job.clone()),
    ]);
    malformed(vec![]);
    malformed(vec![
        Begin(job.clone()),
        Begin(e1.clone()),
        x(&e1),
        End(e1),
        End(job.clone()),
        Begin(job),
    ]);
}

#[test]
fn reader_errors_propagate() {
    let g = single_transform(|xs| Ok(vec![*xs[0]]));
    let mut sink = cellflow::VecSink::new();
    let src: Vec<cellflow::executor::SourceItem<i64>> =
        vec![Err(cellflow::executor::MalformedSource::at_line(7, "broken record"))];
    let err = cellflow::run(&g, src, &RunOptions::with_width(1), &mut sink).unwrap_err();
    assert!(matches!(err, ExecError::MalformedSource(ref m) if m.line == Some(7)));
}

#[test]
fn runaway_unfold_is_stopped() {
    let h = define_hierarchy(&[("run", "job"), ("slice", "run")]).unwrap();
    let mut p = Pipeline::new(h.clone());
    p.register_unfold(
        "forever",
        |n: i64| Ok(Some((vec![n], n + 1))),
        InputSpec::new("n", "run", "int"),
        "slice",
        vec![OutputSpec::new("piece", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("n", "run", "int")]).unwrap();
    let events = flat_events(&h, "run", 1, |c| vec![product("n", c, "int", 0)]);
    let opts = RunOptions {
        max_unfold_children: 50,
        ..RunOptions::with_width(2)
    };
    let err = execute(&g, &events, &opts).unwrap_err();
    assert!(matches!(err, ExecError::RunawayUnfold { limit: 50, .. }), "{err:?}");
}

#[test]
fn empty_pipeline_counts_cells() {
    let h = art();
    let g = build_graph(Pipeline::<i64>::new(h.clone()), vec![]).unwrap();
    let events = art_events(&h, &[vec![5, 5]], |_| vec![]);
    let (products, report) = execute(&g, &events, &RunOptions::with_width(3)).unwrap();
    assert!(products.is_empty());
    assert_eq!(
        report.summary.render(),
        "job: 1\n  run: 1\n    subrun: 2\n      event: 10\n"
    );
}

#[test]
fn monitor_sees_every_event() {
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let seen = Arc::new(AtomicUsize::new(0));
    let mut p = Pipeline::new(h.clone());
    let counter = Arc::clone(&seen);
    p.register_monitor(
        "watch",
        move |_: &[&i64]| {
            counter.fetch_add(1, Ordering::SeqCst);
            Ok(())
        },
        vec![InputSpec::new("x", "event", "int")],
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("x", "event", "int").transient()]).unwrap();
    let (products, _) = execute(&g, &x_events(25), &RunOptions::with_width(4)).unwrap();
    assert!(products.is_empty());
    assert_eq!(seen.load(Ordering::SeqCst), 25);
}

#[test]
fn generic_over_payload() {
    // The engine never inspects payloads; a non-numeric type works as well.
    let h = define_hierarchy(&[("event", "job")]).unwrap();
    let mut p: Pipeline<String> = Pipeline::new(h.clone());
    p.register_fold(
        "concat_len",
        |acc: String, xs: &[&String]| Ok(format!("{}", acc.parse::<usize>().unwrap() + xs[0].len())),
        "0".to_string(),
        vec![InputSpec::new("word", "event", "str")],
        OutputSpec::new("letters", "str"),
        "job",
        Concurrency::Unlimited,
    )
    .unwrap();
    let g = build_graph(p, vec![SourceSpec::new("word", "event", "str").transient()]).unwrap();
    let events = flat_events(&h, "event", 3, |c| {
        vec![DataProduct::new(
            cellflow::ProductLabel::new("word").unwrap(),
            c.clone(),
            cellflow::TypeTag::new("str").unwrap(),
            "ab".repeat(c.index() as usize),
        )]
    });
    let recs = execute_records(&g, &events, 2);
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].2, "12");
}
