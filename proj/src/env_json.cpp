#include "qhmm/env_json.hpp"

#include <fstream>

namespace qhmm {

using nlohmann::json;

json matrix_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(json::array({m(i, j).real(), m(i, j).imag()}));
    rows.push_back(row);
  }
  return rows;
}

Mat matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("matrix must be a non-empty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j.at(static_cast<std::size_t>(i));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) throw std::invalid_argument("ragged matrix");
    for (Eigen::Index k = 0; k < cols; ++k) {
      const json& z = row.at(static_cast<std::size_t>(k));
      if (!z.is_array() || z.size() != 2) throw std::invalid_argument("matrix entries must be [re, im] pairs");
      m(i, k) = cd(z.at(0).get<double>(), z.at(1).get<double>());
    }
  }
  return m;
}

json channel_to_json(const Channel& ch) {
  json k = json::array();
  for (const auto& m : ch.kraus()) k.push_back(matrix_to_json(m));
  return json{{"dim_in", ch.dim_in()}, {"dim_out", ch.dim_out()}, {"kraus", k}};
}

Channel channel_from_json(const json& j) {
  std::vector<Mat> kraus;
  for (const auto& m : j.at("kraus")) kraus.push_back(matrix_from_json(m));
  return Channel(j.at("dim_in").get<int>(), j.at("dim_out").get<int>(), std::move(kraus));
}

json env_to_json(const QhmmEnvironment& env) {
  json j;
  j["format"] = "qhmm-env/1";
  j["S"] = env.S();
  j["O"] = env.O();
  j["L"] = env.L();
  j["rho1"] = matrix_to_json(env.rho1().mat());
  json ch = json::array();
  for (const auto& c : env.channels()) ch.push_back(channel_to_json(c));
  j["channels"] = ch;
  json ins = json::array();
  for (const auto& in : env.instruments()) {
    json br = json::array();
    for (const auto& b : in.branches()) br.push_back(channel_to_json(b));
    ins.push_back(json{{"branches", br}});
  }
  j["instruments"] = ins;
  json acts = json::array();
  for (int a = 0; a < env.A(); ++a) acts.push_back(json{{"label", env.labels()[static_cast<std::size_t>(a)]}, {"instrument", env.instrument_index(a)}});
  j["actions"] = acts;
  json table = json::array();
  for (int l = 0; l < env.L(); ++l) {
    json per_a = json::array();
    for (int a = 0; a < env.A(); ++a) {
      json per_o = json::array();
      for (int o = 0; o < env.O(); ++o) per_o.push_back(env.reward(l, a, o));
      per_a.push_back(per_o);
    }
    table.push_back(per_a);
  }
  j["reward"] = json{{"bound", env.reward_bound()}, {"table", table}};
  return j;
}

QhmmEnvironment env_from_json(const json& j) {
  if (j.value("format", "") != "qhmm-env/1") throw std::invalid_argument("unknown environment format");
  const int L = j.at("L").get<int>();
  const int O = j.at("O").get<int>();
  DensityOperator rho1(matrix_from_json(j.at("rho1")));
  std::vector<Channel> channels;
  for (const auto& c : j.at("channels")) channels.push_back(channel_from_json(c));
  if (static_cast<int>(channels.size()) != L - 1) throw std::invalid_argument("expected L-1 channels");
  auto ins = std::make_shared<std::vector<Instrument>>();
  for (const auto& in : j.at("instruments")) {
    std::vector<Channel> br;
    for (const auto& b : in.at("branches")) br.push_back(channel_from_json(b));
    ins->emplace_back(std::move(br));
  }
  std::vector<int> map;
  std::vector<std::string> labels;
  for (const auto& a : j.at("actions")) {
    map.push_back(a.at("instrument").get<int>());
    labels.push_back(a.at("label").get<std::string>());
  }
  const int A = static_cast<int>(map.size());
  const json& rt = j.at("reward");
  auto table = std::make_shared<RewardTable>(L, A, O);
  const json& t = rt.at("table");
  if (static_cast<int>(t.size()) != L) throw std::invalid_argument("reward table must have L rows");
  for (int l = 0; l < L; ++l) {
    const json& per_a = t.at(static_cast<std::size_t>(l));
    if (static_cast<int>(per_a.size()) != A) throw std::invalid_argument("reward table row must have A entries");
    for (int a = 0; a < A; ++a) {
      const json& per_o = per_a.at(static_cast<std::size_t>(a));
      if (static_cast<int>(per_o.size()) != O) throw std::invalid_argument("reward table entry must have O values");
      for (int o = 0; o < O; ++o) table->at(l, a, o) = per_o.at(static_cast<std::size_t>(o)).get<double>();
    }
  }
  return QhmmEnvironment(std::move(rho1), std::move(channels), std::move(ins), std::move(map), std::move(table),
                         rt.at("bound").get<double>(), std::move(labels));
}

void save_env(const QhmmEnvironment& env, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << env_to_json(env).dump(1) << '\n';
}

QhmmEnvironment load_env(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path);
  return env_from_json(json::parse(f));
}

}  // namespace qhmm
