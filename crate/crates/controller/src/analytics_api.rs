//! Stateless analytics over protocols posted by the client.

use autodo_core::analytics::{
    action_transition_matrix, agent_tour, cluster_states_with, clustered_matrix, feature_dissimilarity,
    hop_dissimilarity, layout, state_transition_matrix, state_vectors, temporal_graph, ClusterFeatures, LayoutOptions,
    StateClustering,
};
use autodo_core::engine::protocol::EvaluationProtocol;
use autodo_core::rules::{
    bucketize, concatenate_evaluations, coverage_stats, induce_rules, Alignment, BucketStrategy, InduceOptions,
};
use axum::routing::post;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::api::{AppState, Body, Principal};
use crate::error::ApiError;

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/analytics/matrix", post(matrix))
        .route("/analytics/graph", post(graph))
        .route("/analytics/cluster", post(cluster))
        .route("/analytics/layout", post(layout_endpoint))
        .route("/analytics/rules", post(rules))
}

/// Error kind taken from the variant name, e.g. `TooFewStates`.
fn failure(e: impl std::fmt::Debug + std::fmt::Display) -> ApiError {
    let debug = format!("{e:?}");
    let code: String = debug.chars().take_while(|c| c.is_alphanumeric()).collect();
    ApiError::unprocessable(code, e)
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum MatrixChoice {
    #[default]
    State,
    Action,
    Clustered,
}

#[derive(Deserialize)]
struct MatrixRequest {
    protocols: Vec<EvaluationProtocol>,
    #[serde(default)]
    kind: MatrixChoice,
    k: Option<usize>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    features: ClusterFeatures,
    /// Explicit clustering; computed from `k` and `seed` when absent.
    clustering: Option<StateClustering>,
}

async fn matrix(Principal(_): Principal, Body(req): Body<MatrixRequest>) -> Result<Json<Value>, ApiError> {
    let p = &req.protocols;
    match req.kind {
        MatrixChoice::State => Ok(Json(json!({ "matrix": state_transition_matrix(p).map_err(failure)? }))),
        MatrixChoice::Action => Ok(Json(json!({ "matrix": action_transition_matrix(p).map_err(failure)? }))),
        MatrixChoice::Clustered => {
            let clustering = match req.clustering {
                Some(c) => c,
                None => {
                    let k = req.k.ok_or_else(|| ApiError::BadRequest("clustered matrices need `k`".into()))?;
                    cluster_states_with(p, k, req.seed, req.features).map_err(failure)?
                }
            };
            let m = clustered_matrix(p, &clustering).map_err(failure)?;
            Ok(Json(json!({ "matrix": m, "clustering": clustering })))
        }
    }
}

#[derive(Deserialize)]
struct GraphRequest {
    protocols: Vec<EvaluationProtocol>,
    episode: Option<u32>,
}

fn pick_episode(protocols: &[EvaluationProtocol], episode: Option<u32>) -> Result<&EvaluationProtocol, ApiError> {
    match episode {
        None => protocols.first(),
        Some(e) => protocols.iter().find(|p| p.episode == e),
    }
    .ok_or_else(|| ApiError::BadRequest("no such episode in the posted protocols".into()))
}

async fn graph(Principal(_): Principal, Body(req): Body<GraphRequest>) -> Result<Json<Value>, ApiError> {
    let p = pick_episode(&req.protocols, req.episode)?;
    Ok(Json(serde_json::to_value(temporal_graph(p).map_err(failure)?)?))
}

#[derive(Deserialize)]
struct ClusterRequest {
    protocols: Vec<EvaluationProtocol>,
    k: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    features: ClusterFeatures,
}

async fn cluster(Principal(_): Principal, Body(req): Body<ClusterRequest>) -> Result<Json<StateClustering>, ApiError> {
    cluster_states_with(&req.protocols, req.k, req.seed, req.features)
        .map(Json)
        .map_err(failure)
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Dissimilarity {
    /// Shortest-path hops in the state transition graph.
    #[default]
    Hop,
    /// Euclidean distance between state vectors.
    Feature,
}

fn two() -> usize {
    2
}

#[derive(Deserialize)]
struct LayoutRequest {
    protocols: Vec<EvaluationProtocol>,
    #[serde(default)]
    dissimilarity: Dissimilarity,
    #[serde(default = "two")]
    dims: usize,
    #[serde(default)]
    seed: u64,
    max_iter: Option<usize>,
    tol: Option<f64>,
    /// Episode whose tour is returned; the first one by default.
    tour_episode: Option<u32>,
}

async fn layout_endpoint(Principal(_): Principal, Body(req): Body<LayoutRequest>) -> Result<Json<Value>, ApiError> {
    let p = &req.protocols;
    let (nodes, d) = match req.dissimilarity {
        Dissimilarity::Hop => {
            let m = state_transition_matrix(p).map_err(failure)?;
            let d = hop_dissimilarity(&m);
            (m.labels, d)
        }
        Dissimilarity::Feature => {
            let (labels, vectors) = state_vectors(p);
            (labels, feature_dissimilarity(&vectors))
        }
    };
    let defaults = LayoutOptions::default();
    let options = LayoutOptions {
        dims: req.dims,
        seed: req.seed,
        max_iter: req.max_iter.unwrap_or(defaults.max_iter),
        tol: req.tol.unwrap_or(defaults.tol),
    };
    let l = layout(&nodes, &d, options).map_err(failure)?;
    let tour = agent_tour(pick_episode(p, req.tour_episode)?, &l).map_err(failure)?;
    Ok(Json(json!({
        "layout": l.export(),
        "iterations": l.iterations,
        "stress_trace": l.stress_trace,
        "tour": tour,
    })))
}

fn default_interval() -> (u32, u32) {
    (0, 20)
}

fn default_column() -> String {
    "action".into()
}

fn four() -> usize {
    4
}

#[derive(Deserialize)]
struct RulesRequest {
    protocols: Vec<EvaluationProtocol>,
    #[serde(default = "default_interval")]
    interval: (u32, u32),
    #[serde(default = "default_column")]
    column: String,
    #[serde(default = "four")]
    n_buckets: usize,
    #[serde(default = "equal_width")]
    strategy: BucketStrategy,
    #[serde(default)]
    alignment: Alignment,
    max_conditions: Option<usize>,
    min_coverage: Option<usize>,
}

fn equal_width() -> BucketStrategy {
    BucketStrategy::EqualWidth
}

async fn rules(Principal(_): Principal, Body(req): Body<RulesRequest>) -> Result<Json<Value>, ApiError> {
    let (lo, hi) = req.interval;
    let table = concatenate_evaluations(&req.protocols, lo, hi, req.alignment).map_err(failure)?;
    let data = bucketize(&table, &req.column, req.n_buckets, req.strategy).map_err(failure)?;
    let defaults = InduceOptions::for_rows(data.len());
    let options = InduceOptions {
        max_conditions: req.max_conditions.unwrap_or(defaults.max_conditions),
        min_coverage: req.min_coverage.unwrap_or(defaults.min_coverage),
    };
    let set = induce_rules(&data, options).map_err(failure)?;
    let coverage = coverage_stats(&set, &data).map_err(failure)?;
    Ok(Json(json!({
        "rules": set.export(),
        "rendering": set.render(),
        "label_column": data.label_column,
        "boundaries": data.boundaries,
        "interval": [lo, hi],
        "rows": data.len(),
        "degenerate": set.degenerate,
        "coverage": coverage,
    })))
}
