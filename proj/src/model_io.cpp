#include <cmath>

#include <json.hpp>

#include "progscore/em_fit.hpp"
#include "progscore/io_util.hpp"

namespace progscore {

namespace {

using nlohmann::json;

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Vec vec_from_json(const json& a) {
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

}  // namespace

std::string model_to_json(const FittedModel& m) {
  json j;
  j["format"] = "progscore-model";
  j["format_version"] = 1;
  j["tool_version"] = kVersion;
  j["stage"] = m.stage == FitStage::IndependentNoise ? "independent" : "correlated";
  j["kernel"] = kernel_name(m.theta.noise.family);
  j["rho"] = m.theta.noise.rho;
  j["lambda"] = {{"scaled", m.theta.noise.scaled},
                 {"scale", m.theta.noise.lambda_scale},
                 {"diag", vec_to_json(m.theta.noise.lambda_diag)}};
  j["lambda_hat_digest"] = m.lambda_hat_digest;
  j["a"] = vec_to_json(m.theta.a);
  j["b"] = vec_to_json(m.theta.b);
  j["m"] = {m.theta.m(0), m.theta.m(1)};
  j["nu"] = {m.theta.nu(0), m.theta.nu(1), m.theta.nu(2)};
  j["standardization"] = {{"w", m.w}, {"z", m.z}, {"sign_flipped", m.sign_flipped}};
  j["loglik"] = m.loglik;
  j["aic"] = m.aic;
  j["iterations"] = m.iterations;
  j["converged"] = m.converged;
  j["scores_informative"] = m.scores_informative;
  if (std::isfinite(m.stage1_loglik)) {
    j["stage1"] = {{"loglik", m.stage1_loglik}, {"aic", m.stage1_aic}};
  }
  if (!m.family_logliks.empty()) {
    json fl = json::object();
    for (const auto& [family, ll] : m.family_logliks) fl[kernel_name(family)] = ll;
    j["family_logliks"] = fl;
  }

  json grid = json::object();
  grid["voxel_ids"] = m.grid.voxel_ids;
  json pos = json::array();
  for (int k = 0; k < m.grid.n_voxels(); ++k) {
    pos.push_back({m.grid.positions(k, 0), m.grid.positions(k, 1), m.grid.positions(k, 2)});
  }
  grid["positions_mm"] = pos;
  if (!m.grid.roi_labels.empty()) grid["roi_labels"] = m.grid.roi_labels;
  j["grid"] = grid;

  json subjects = json::array();
  for (std::size_t i = 0; i < m.subject_ids.size(); ++i) {
    const auto& p = m.posteriors[i];
    json s;
    s["id"] = m.subject_ids[i];
    s["alpha"] = p.u_hat(0);
    s["beta"] = p.u_hat(1);
    s["sigma"] = {p.sigma(0, 0), p.sigma(0, 1), p.sigma(1, 1)};
    json visits = json::array();
    for (std::size_t v = 0; v < m.subject_visits[i].size(); ++v) {
      visits.push_back({{"visit_index", m.subject_visits[i][v].visit_index},
                        {"age", m.subject_visits[i][v].age},
                        {"s", p.s(static_cast<Eigen::Index>(v))}});
    }
    s["visits"] = visits;
    subjects.push_back(s);
  }
  j["subjects"] = subjects;

  json trace = json::array();
  for (const auto& r : m.trace)
    trace.push_back({{"stage", r.stage}, {"iter", r.iter}, {"loglik", r.loglik}});
  j["trace"] = trace;

  return j.dump(2) + "\n";
}

FittedModel model_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.value("format", "") != "progscore-model")
    throw DataError("model file: unrecognized format");

  FittedModel m;
  m.stage = j.at("stage").get<std::string>() == "independent" ? FitStage::IndependentNoise
                                                              : FitStage::CorrelatedNoise;
  m.theta.noise.family = kernel_from_name(j.at("kernel").get<std::string>());
  m.theta.noise.rho = j.at("rho").get<double>();
  m.theta.noise.scaled = j.at("lambda").at("scaled").get<bool>();
  m.theta.noise.lambda_scale = j.at("lambda").at("scale").get<double>();
  m.theta.noise.lambda_diag = vec_from_json(j.at("lambda").at("diag"));
  m.lambda_hat_digest = j.value("lambda_hat_digest", "");
  m.theta.a = vec_from_json(j.at("a"));
  m.theta.b = vec_from_json(j.at("b"));
  m.theta.m = Vec2(j.at("m")[0].get<double>(), j.at("m")[1].get<double>());
  m.theta.nu = Vec3(j.at("nu")[0].get<double>(), j.at("nu")[1].get<double>(),
                    j.at("nu")[2].get<double>());
  m.w = j.at("standardization").at("w").get<double>();
  m.z = j.at("standardization").at("z").get<double>();
  m.sign_flipped = j.at("standardization").at("sign_flipped").get<bool>();
  m.loglik = j.at("loglik").get<double>();
  m.aic = j.at("aic").get<double>();
  m.iterations = j.at("iterations").get<int>();
  m.converged = j.at("converged").get<bool>();
  m.scores_informative = j.value("scores_informative", true);
  if (j.contains("stage1")) {
    m.stage1_loglik = j["stage1"].at("loglik").get<double>();
    m.stage1_aic = j["stage1"].at("aic").get<double>();
  }
  if (j.contains("family_logliks")) {
    for (const auto& [name, ll] : j["family_logliks"].items())
      m.family_logliks.emplace_back(kernel_from_name(name), ll.get<double>());
  }

  const json& grid = j.at("grid");
  m.grid.voxel_ids = grid.at("voxel_ids").get<std::vector<std::string>>();
  const json& pos = grid.at("positions_mm");
  m.grid.positions.resize(static_cast<Eigen::Index>(pos.size()), 3);
  for (std::size_t k = 0; k < pos.size(); ++k)
    for (int c = 0; c < 3; ++c)
      m.grid.positions(static_cast<Eigen::Index>(k), c) = pos[k][c].get<double>();
  if (grid.contains("roi_labels"))
    m.grid.roi_labels = grid.at("roi_labels").get<std::vector<std::string>>();

  for (const auto& s : j.at("subjects")) {
    m.subject_ids.push_back(s.at("id").get<std::string>());
    SubjectPosterior p;
    p.u_hat = Vec2(s.at("alpha").get<double>(), s.at("beta").get<double>());
    p.sigma << s.at("sigma")[0].get<double>(), s.at("sigma")[1].get<double>(),
        s.at("sigma")[1].get<double>(), s.at("sigma")[2].get<double>();
    std::vector<VisitKey> keys;
    std::vector<double> scores;
    for (const auto& v : s.at("visits")) {
      keys.push_back({v.at("visit_index").get<long>(), v.at("age").get<double>()});
      scores.push_back(v.at("s").get<double>());
    }
    p.s = Eigen::Map<Vec>(scores.data(), static_cast<Eigen::Index>(scores.size()));
    m.posteriors.push_back(std::move(p));
    m.subject_visits.push_back(std::move(keys));
  }

  for (const auto& r : j.at("trace")) {
    m.trace.push_back({r.at("stage").get<int>(), r.at("iter").get<int>(),
                       r.at("loglik").get<double>()});
  }

  m.corr = CorrelationFactor::build(m.grid, m.theta.noise.family, m.theta.noise.rho);
  return m;
}

void save_model(const FittedModel& m, const std::string& path) {
  atomic_write_file(path, model_to_json(m));
}

FittedModel load_model(const std::string& path) { return model_from_json(read_file(path)); }

}  // namespace progscore
