//! REST surface of the fake cluster. Bodies mirror the cluster API's JSON
//! shapes closely enough for [`crate::clusterapi::ClusterClient`].

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::SecondsFormat;
use serde_json::{json, Value};

use super::state::JobRecord;
use super::Shared;
use crate::manifests::{validate_name, ConfigMapManifest, JobManifest, JobPhase};

type App = Arc<Shared>;

pub(crate) fn router(shared: App) -> Router {
    Router::new()
        .route(
            "/api/v1/namespaces/:ns/configmaps",
            get(list_configmaps).post(create_configmap),
        )
        .route(
            "/api/v1/namespaces/:ns/configmaps/:name",
            get(get_configmap).delete(delete_configmap),
        )
        .route("/apis/batch/v1/namespaces/:ns/jobs", get(list_jobs).post(create_job))
        .route(
            "/apis/batch/v1/namespaces/:ns/jobs/:name",
            get(get_job).delete(delete_job),
        )
        .route("/api/v1/namespaces/:ns/pods", get(list_pods))
        .route("/api/v1/namespaces/:ns/pods/:pod/log", get(pod_log))
        .route("/__q8s/introspect", get(introspect))
        .with_state(shared)
}

fn status(code: StatusCode, reason: &str, message: impl Into<String>) -> Response {
    let body = json!({
        "kind": "Status",
        "apiVersion": "v1",
        "metadata": {},
        "status": if code.is_success() { "Success" } else { "Failure" },
        "message": message.into(),
        "reason": reason,
        "code": code.as_u16(),
    });
    (code, Json(body)).into_response()
}

fn authorize(shared: &Shared, headers: &HeaderMap) -> Result<(), Response> {
    let Some(expected) = &shared.token else {
        return Ok(());
    };
    let presented = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(expected.as_str()) {
        Ok(())
    } else {
        Err(status(StatusCode::UNAUTHORIZED, "Unauthorized", "Unauthorized"))
    }
}

fn ts(shared: &Shared, t: f64) -> String {
    shared
        .clock
        .timestamp(t)
        .to_rfc3339_opts(SecondsFormat::Micros, true)
}

fn configmap_json(shared: &Shared, ns: &str, cm: &ConfigMapManifest, created: f64) -> Value {
    json!({
        "apiVersion": "v1",
        "kind": "ConfigMap",
        "metadata": {
            "name": cm.name,
            "namespace": ns,
            "creationTimestamp": ts(shared, created),
        },
        "data": cm.data,
    })
}

fn job_json(shared: &Shared, ns: &str, rec: &JobRecord) -> Value {
    let job = &rec.manifest;
    let mut limits = serde_json::Map::new();
    if let Some(l) = &job.limit {
        limits.insert(l.key.clone(), Value::String(l.quantity.clone()));
    }
    let mut st = serde_json::Map::new();
    match rec.phase {
        JobPhase::Pending => {
            st.insert("active".into(), json!(1));
            st.insert("ready".into(), json!(0));
        }
        JobPhase::Running => {
            st.insert("active".into(), json!(1));
            st.insert("ready".into(), json!(1));
        }
        JobPhase::Succeeded => {
            st.insert("succeeded".into(), json!(1));
            st.insert("ready".into(), json!(0));
        }
        JobPhase::Failed => {
            st.insert("failed".into(), json!(1));
            st.insert("ready".into(), json!(0));
        }
    }
    if let Some(t) = rec.started_at {
        st.insert("startTime".into(), json!(ts(shared, t)));
    }
    if let Some(t) = rec.finished_at {
        let at = ts(shared, t);
        let condition = if rec.phase == JobPhase::Succeeded {
            st.insert("completionTime".into(), json!(at));
            json!({"type": "Complete", "status": "True", "lastTransitionTime": at})
        } else {
            json!({
                "type": "Failed",
                "status": "True",
                "reason": "BackoffLimitExceeded",
                "message": "Job has reached the specified backoff limit",
                "lastTransitionTime": at,
            })
        };
        st.insert("conditions".into(), json!([condition]));
    }
    json!({
        "apiVersion": "batch/v1",
        "kind": "Job",
        "metadata": {
            "name": job.name,
            "namespace": ns,
            "uid": format!("job-{:05x}", rec.seq),
            "creationTimestamp": ts(shared, rec.created_at),
        },
        "spec": {
            "template": {
                "metadata": {"name": job.pod_name},
                "spec": {
                    "containers": [{
                        "name": job.container_name,
                        "image": job.image,
                        "command": job.command,
                        "resources": {"limits": limits},
                        "volumeMounts": [{"name": job.volume_name, "mountPath": job.mount_path}],
                    }],
                    "volumes": [{"name": job.volume_name, "configMap": {"name": job.configmap_name}}],
                    "restartPolicy": job.restart_policy,
                }
            }
        },
        "status": st,
    })
}

fn pod_json(shared: &Shared, ns: &str, rec: &JobRecord) -> Value {
    let job = &rec.manifest;
    let state = match (rec.phase, &rec.result) {
        (JobPhase::Pending, _) => json!({"waiting": {"reason": "ContainerCreating"}}),
        (JobPhase::Running, _) => json!({"running": {
            "startedAt": ts(shared, rec.container_started_at.or(rec.started_at).unwrap_or(rec.created_at)),
        }}),
        (_, result) => {
            let (code, reason) = match result {
                Some(r) if r.exit_code == 0 => (0, "Completed".to_string()),
                Some(r) => (r.exit_code, r.reason.clone().unwrap_or_else(|| "Error".into())),
                None => (1, "Error".to_string()),
            };
            json!({"terminated": {
                "exitCode": code,
                "reason": reason,
                "startedAt": ts(shared, rec.container_started_at.unwrap_or(rec.created_at)),
                "finishedAt": ts(shared, rec.finished_at.unwrap_or(rec.created_at)),
            }})
        }
    };
    json!({
        "apiVersion": "v1",
        "kind": "Pod",
        "metadata": {
            "name": rec.pod_name,
            "namespace": ns,
            "labels": {"job-name": job.name},
            "creationTimestamp": ts(shared, rec.created_at),
        },
        "status": {
            "phase": rec.phase.to_string(),
            "containerStatuses": [{
                "name": job.container_name,
                "image": job.image,
                "ready": rec.phase == JobPhase::Running,
                "state": state,
            }],
        },
    })
}

fn list(kind: &str, items: Vec<Value>) -> Response {
    Json(json!({"apiVersion": "v1", "kind": kind, "metadata": {}, "items": items})).into_response()
}

async fn create_configmap(
    State(shared): State<App>,
    Path(ns): Path<String>,
    headers: HeaderMap,
    body: String,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let cm = match ConfigMapManifest::from_yaml(&body) {
        Ok(cm) => cm,
        Err(e) => return status(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()),
    };
    if let Err(e) = validate_name(&cm.name) {
        return status(StatusCode::UNPROCESSABLE_ENTITY, "Invalid", e.to_string());
    }
    let now = shared.clock.now();
    let mut state = shared.sync();
    match state.insert_configmap(&ns, cm.clone(), now) {
        Ok(()) => (StatusCode::CREATED, Json(configmap_json(&shared, &ns, &cm, now))).into_response(),
        Err(msg) => status(StatusCode::CONFLICT, "AlreadyExists", msg),
    }
}

async fn list_configmaps(
    State(shared): State<App>,
    Path(ns): Path<String>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let state = shared.sync();
    let items = state
        .configmaps
        .iter()
        .filter(|((n, _), _)| n == &ns)
        .map(|(_, (cm, t))| configmap_json(&shared, &ns, cm, *t))
        .collect();
    list("ConfigMapList", items)
}

async fn get_configmap(
    State(shared): State<App>,
    Path((ns, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let state = shared.sync();
    match state.configmaps.get(&(ns.clone(), name.clone())) {
        Some((cm, t)) => Json(configmap_json(&shared, &ns, cm, *t)).into_response(),
        None => status(StatusCode::NOT_FOUND, "NotFound", format!("configmaps \"{name}\" not found")),
    }
}

async fn delete_configmap(
    State(shared): State<App>,
    Path((ns, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    if shared.sync().delete_configmap(&ns, &name) {
        status(StatusCode::OK, "", format!("configmaps \"{name}\" deleted"))
    } else {
        status(StatusCode::NOT_FOUND, "NotFound", format!("configmaps \"{name}\" not found"))
    }
}

async fn create_job(
    State(shared): State<App>,
    Path(ns): Path<String>,
    headers: HeaderMap,
    body: String,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let job = match JobManifest::from_yaml(&body) {
        Ok(job) => job,
        Err(e) => return status(StatusCode::BAD_REQUEST, "BadRequest", e.to_string()),
    };
    if let Err(e) = validate_name(&job.name) {
        return status(StatusCode::UNPROCESSABLE_ENTITY, "Invalid", e.to_string());
    }
    let now = shared.clock.now();
    let mut state = shared.sync();
    if let Err(msg) = state.insert_job(&ns, job.clone(), now) {
        return status(StatusCode::CONFLICT, "AlreadyExists", msg);
    }
    let rec = &state.jobs[&(ns.clone(), job.name.clone())];
    (StatusCode::CREATED, Json(job_json(&shared, &ns, rec))).into_response()
}

async fn list_jobs(
    State(shared): State<App>,
    Path(ns): Path<String>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let state = shared.sync();
    let items = state
        .jobs
        .iter()
        .filter(|((n, _), _)| n == &ns)
        .map(|(_, rec)| job_json(&shared, &ns, rec))
        .collect();
    list("JobList", items)
}

async fn get_job(
    State(shared): State<App>,
    Path((ns, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let state = shared.sync();
    match state.jobs.get(&(ns.clone(), name.clone())) {
        Some(rec) => Json(job_json(&shared, &ns, rec)).into_response(),
        None => status(StatusCode::NOT_FOUND, "NotFound", format!("jobs.batch \"{name}\" not found")),
    }
}

async fn delete_job(
    State(shared): State<App>,
    Path((ns, name)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    if shared.sync().delete_job(&ns, &name) {
        status(StatusCode::OK, "", format!("jobs.batch \"{name}\" deleted"))
    } else {
        status(StatusCode::NOT_FOUND, "NotFound", format!("jobs.batch \"{name}\" not found"))
    }
}

async fn list_pods(
    State(shared): State<App>,
    Path(ns): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let selector = match query.get("labelSelector").map(String::as_str) {
        None | Some("") => None,
        Some(sel) => match sel.strip_prefix("job-name=") {
            Some(job) => Some(job.to_string()),
            None => {
                return status(
                    StatusCode::BAD_REQUEST,
                    "BadRequest",
                    format!("unsupported label selector {sel:?}"),
                )
            }
        },
    };
    let state = shared.sync();
    let items = state
        .jobs
        .iter()
        .filter(|((n, j), _)| n == &ns && selector.as_ref().is_none_or(|s| s == j))
        .map(|(_, rec)| pod_json(&shared, &ns, rec))
        .collect();
    list("PodList", items)
}

async fn pod_log(
    State(shared): State<App>,
    Path((ns, pod)): Path<(String, String)>,
    headers: HeaderMap,
) -> Response {
    if let Err(r) = authorize(&shared, &headers) {
        return r;
    }
    let state = shared.sync();
    let Some(rec) = state
        .jobs
        .iter()
        .find(|((n, _), rec)| n == &ns && rec.pod_name == pod)
        .map(|(_, rec)| rec)
    else {
        return status(StatusCode::NOT_FOUND, "NotFound", format!("pods \"{pod}\" not found"));
    };
    match rec.phase {
        JobPhase::Pending => status(
            StatusCode::BAD_REQUEST,
            "BadRequest",
            format!(
                "container \"{}\" in pod \"{pod}\" is waiting to start: ContainerCreating",
                rec.manifest.container_name
            ),
        ),
        JobPhase::Running => (StatusCode::OK, [(header::CONTENT_TYPE, "text/plain")], String::new()).into_response(),
        _ => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "text/plain")],
            rec.log().unwrap_or_default().to_string(),
        )
            .into_response(),
    }
}

async fn introspect(State(shared): State<App>) -> Response {
    let state = shared.sync();
    let mut body = serde_json::to_value(state.introspect()).unwrap_or_default();
    body["now"] = json!(shared.clock.now());
    Json(body).into_response()
}
