//! Text renderings of a run report, working on the JSON value so that saved
//! reports can be re-rendered without the originating run.

use serde_json::Value;
use std::fmt::Write;

fn num(v: &Value) -> String {
    if let Some(i) = v.as_i64() {
        return i.to_string();
    }
    match v.as_f64() {
        Some(x) if x == 0.0 || (1e-3..1e6).contains(&x.abs()) => format!("{x:.6}"),
        Some(x) => format!("{x:.4e}"),
        None if v.is_null() => "-".into(),
        None => v.to_string().trim_matches('"').to_string(),
    }
}

fn text<'a>(v: &'a Value, key: &str) -> &'a str {
    v.get(key).and_then(Value::as_str).unwrap_or("-")
}

fn flag(v: &Value, key: &str) -> &'static str {
    match v.get(key).and_then(Value::as_bool) {
        Some(true) => "yes",
        Some(false) => "no",
        None => "-",
    }
}

fn items<'a>(v: &'a Value, key: &str) -> &'a [Value] {
    v.get(key).and_then(Value::as_array).map(Vec::as_slice).unwrap_or(&[])
}

fn weight(v: &Value) -> String {
    match v.get("weight") {
        Some(w) if w.get("kind").and_then(Value::as_str) == Some("linear") => {
            format!("T - t (T = {})", num(&w["candidate_t"]))
        }
        Some(w) => text(w, "kind").to_string(),
        None => "-".into(),
    }
}

pub fn table(r: &Value) -> String {
    let mut out = String::new();
    let s = &r["solver"];
    let _ = writeln!(
        out,
        "system {}  initial {}  N {}  dt {}  t_end {}  T {}  weight {}",
        text(r, "system"),
        text(r, "initial"),
        num(&r["n"]),
        num(&r["dt"]),
        num(&r["t_end"]),
        num(&r["candidate_t"]),
        weight(r)
    );
    let _ = writeln!(
        out,
        "solver: energy drift {}  theta drift {}  max div {}  tail {}  under-resolved {}",
        num(&s["energy_max_relative_drift"]),
        num(&s["theta_l2_max_relative_drift"]),
        num(&s["max_divergence"]),
        num(&s["max_tail_fraction"]),
        flag(s, "under_resolved")
    );

    let _ = writeln!(out, "\ncriteria (type-I threshold {})", num(&r["type_one_threshold"]));
    let _ = writeln!(
        out,
        "  {:<20} {:<10} {:>14} {:>7} {:>14}  {}",
        "kind", "region", "value", "finite", "limsup", "verdict"
    );
    for c in items(r, "criteria") {
        let (limsup, verdict) = match c.get("monitor") {
            Some(m) if !m.is_null() => (num(&m["limsup"]), text(m, "verdict").to_string()),
            _ => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            out,
            "  {:<20} {:<10} {:>14} {:>7} {:>14}  {}",
            text(c, "kind"),
            text(c, "region_name"),
            num(&c["value"]),
            flag(c, "finite"),
            limsup,
            verdict
        );
    }

    let _ = writeln!(out, "\nvorticity and velocity integrals");
    for (label, key) in [("bkm", "bkm"), ("velocity", "velocity_integrals")] {
        for b in items(r, key) {
            let _ = writeln!(out, "  {:<9} {:<10} {:>14}", label, text(b, "region_name"), num(&b["value"]));
        }
    }
    let ib = &r["integrated_bound"];
    let _ = writeln!(
        out,
        "  integrated bound: {} <= {}  {}",
        num(&ib["lhs"]),
        num(&ib["rhs"]),
        if ib["holds"].as_bool() == Some(true) { "holds" } else { "VIOLATED" }
    );

    if let Some(t) = r.get("tracers").filter(|t| !t.is_null()) {
        let _ = writeln!(
            out,
            "\ntracers: {} (accuracy {}, field max {})",
            num(&t["count"]),
            num(&t["accuracy"]),
            num(&t["field_max"])
        );
        for res in items(t, "residuals") {
            let _ = writeln!(
                out,
                "  residual {:<28} max {:>12}  evaluated {:>7}  masked {:>6}",
                text(res, "kind"),
                num(&res["max_abs"]),
                num(&res["evaluated"]),
                num(&res["masked"])
            );
        }
        for b in items(t, "bounds") {
            let _ = writeln!(
                out,
                "  bound    {:<28} violations {:>5}  min margin {:>12}  {}",
                text(b, "variant"),
                num(&b["violations"]),
                num(&b["min_margin"]),
                if b["asserted"].as_bool() == Some(true) { "asserted" } else { "reported" }
            );
        }
    }
    let _ = writeln!(out, "\nverification passed: {}", flag(r, "verification_passed"));
    out
}

pub fn csv(r: &Value) -> String {
    let mut out = String::from("section,name,region,value,status\n");
    let mut row = |section: &str, name: &str, region: &str, value: &Value, status: &str| {
        let value = value.as_f64().map(|x| format!("{x:e}")).unwrap_or_default();
        let _ = writeln!(out, "{section},{name},{region},{value},{status}");
    };
    for c in items(r, "criteria") {
        let verdict = c
            .get("monitor")
            .filter(|m| !m.is_null())
            .map(|m| text(m, "verdict"))
            .unwrap_or("");
        let status = if c["finite"].as_bool() == Some(true) { "finite" } else { "infinite" };
        row("criterion", text(c, "kind"), text(c, "region_name"), &c["value"], status);
        if let Some(m) = c.get("monitor").filter(|m| !m.is_null()) {
            row("type-one", text(c, "kind"), text(c, "region_name"), &m["limsup"], verdict);
        }
    }
    for b in items(r, "bkm") {
        row("bkm", "vorticity", text(b, "region_name"), &b["value"], "");
    }
    for b in items(r, "velocity_integrals") {
        row("velocity-integral", "velocity", text(b, "region_name"), &b["value"], "");
    }
    let ib = &r["integrated_bound"];
    let holds = if ib["holds"].as_bool() == Some(true) { "holds" } else { "violated" };
    row("integrated-bound", "lhs", "global", &ib["lhs"], holds);
    row("integrated-bound", "rhs", "global", &ib["rhs"], holds);
    let s = &r["solver"];
    for key in [
        "energy_max_relative_drift",
        "theta_l2_max_relative_drift",
        "max_divergence",
        "max_tail_fraction",
        "max_velocity_deviation",
    ] {
        if !s[key].is_null() {
            row("solver", key, "global", &s[key], "");
        }
    }
    if let Some(t) = r.get("tracers").filter(|t| !t.is_null()) {
        for res in items(t, "residuals") {
            row("residual", text(res, "kind"), "tracers", &res["max_abs"], "");
        }
        for b in items(t, "bounds") {
            let status = match (b["asserted"].as_bool(), b["violations"].as_u64()) {
                (Some(true), Some(0)) => "pass",
                (Some(true), _) => "fail",
                _ => "reported",
            };
            row("bound-min-margin", text(b, "variant"), "tracers", &b["min_margin"], status);
        }
    }
    out
}
