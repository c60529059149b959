#include "flowchain/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

namespace flowchain {

using nlohmann::json;

void SimforkConfig::validate() const
{
    if (trajectories < 1 || obs_len < 2 || horizon < 1) throw ShapeError("simfork: counts must be positive");
    if (!(step > 0.0) || !(noise >= 0.0) || !(fork_angle_deg > 0.0)) {
        throw ShapeError("simfork: step and fork angle must be positive, noise non-negative");
    }
    if (!(branch_prob > 0.0 && branch_prob < 1.0)) throw ShapeError("simfork: branch_prob must be in (0, 1)");
}

double GaussianMixture::log_pdf(const Vec2& p) const
{
    const double norm = -std::log(2.0 * std::numbers::pi * stddev * stddev);
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms(means.size());
    for (std::size_t k = 0; k < means.size(); ++k) {
        terms[k] = std::log(weights[k]) + norm - 0.5 * (p - means[k]).squaredNorm() / (stddev * stddev);
        best = std::max(best, terms[k]);
    }
    if (!std::isfinite(best)) return best;
    double s = 0.0;
    for (double t : terms) s += std::exp(t - best);
    return best + std::log(s);
}

Vec2 simfork_skeleton(const SimforkConfig& cfg, int index, int branch)
{
    const int n = index - (cfg.obs_len - 1);
    if (n <= 0) return Vec2(n * cfg.step, 0.0);
    const double a = cfg.fork_angle_deg * std::numbers::pi / 180.0;
    return Vec2(n * cfg.step * std::cos(a), branch * n * cfg.step * std::sin(a));
}

GroundTruthDensity simfork_density(const SimforkConfig& cfg)
{
    cfg.validate();
    if (!(cfg.noise > 0.0)) throw ShapeError("simfork: analytic density needs noise > 0");
    GroundTruthDensity gt;
    for (int n = 1; n <= cfg.horizon; ++n) {
        GaussianMixture m;
        const int idx = cfg.obs_len - 1 + n;
        m.means = {simfork_skeleton(cfg, idx, +1), simfork_skeleton(cfg, idx, -1)};
        m.weights = {cfg.branch_prob, 1.0 - cfg.branch_prob};
        m.stddev = cfg.noise;
        gt.steps.push_back(std::move(m));
    }
    return gt;
}

SimforkData gen_simfork(const SimforkConfig& cfg, Rng& rng)
{
    cfg.validate();
    SimforkData data;
    if (cfg.noise > 0.0) data.density = simfork_density(cfg);
    std::bernoulli_distribution left(cfg.branch_prob);
    std::normal_distribution<double> normal(0.0, 1.0);
    const int len = cfg.obs_len + cfg.horizon;
    for (int i = 0; i < cfg.trajectories; ++i) {
        const int branch = left(rng) ? 1 : -1;
        Matrix t(len, 2);
        for (int k = 0; k < len; ++k) {
            const Vec2 p = simfork_skeleton(cfg, k, branch);
            const double nx = normal(rng);
            const double ny = normal(rng);
            t(k, 0) = p.x() + cfg.noise * nx;
            t(k, 1) = p.y() + cfg.noise * ny;
        }
        data.trajectories.push_back(std::move(t));
        data.branch.push_back(branch);
    }
    return data;
}

void UnicycleConfig::validate() const
{
    if (trajectories < 1 || length < 2) throw ShapeError("unicycle: counts must be positive");
    if (!(speed >= 0.0) || !(speed_noise >= 0.0) || !(yaw_noise >= 0.0) || !(dt > 0.0)) {
        throw ShapeError("unicycle: speed and noise must be non-negative, dt positive");
    }
}

std::vector<Matrix> gen_unicycle(const UnicycleConfig& cfg, Rng& rng)
{
    cfg.validate();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(cfg.trajectories));
    for (int i = 0; i < cfg.trajectories; ++i) {
        Matrix t(cfg.length, 2);
        double x = 0.0, y = 0.0, theta = cfg.heading;
        t.row(0) << x, y;
        for (int k = 1; k < cfg.length; ++k) {
            const double v = std::max(0.0, cfg.speed + cfg.speed_noise * normal(rng));
            const double w = cfg.yaw_rate + cfg.yaw_noise * normal(rng);
            if (std::abs(w) < 1e-12) {
                x += v * cfg.dt * std::cos(theta);
                y += v * cfg.dt * std::sin(theta);
            } else {
                const double next = theta + w * cfg.dt;
                x += v / w * (std::sin(next) - std::sin(theta));
                y -= v / w * (std::cos(next) - std::cos(theta));
                theta = next;
            }
            t.row(k) << x, y;
        }
        out.push_back(std::move(t));
    }
    return out;
}

// ---------------------------------------------------------------------------
// TrajNet

namespace {

template <class T>
bool parse_number(const std::string& token, T& value)
{
    const char* end = token.data() + token.size();
    auto [ptr, ec] = std::from_chars(token.data(), end, value);
    return ec == std::errc() && ptr == end;
}

int parse_id(const std::string& token, bool& ok)
{
    int i = 0;
    if (parse_number(token, i)) return i;
    double d = 0.0;
    if (parse_number(token, d) && std::isfinite(d) && d == std::floor(d) && std::abs(d) < 2e9) {
        return static_cast<int>(d);
    }
    ok = false;
    return 0;
}

}  // namespace

std::vector<TrajnetRow> read_trajnet_rows(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::vector<TrajnetRow> rows;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        std::istringstream ss(line);
        std::vector<std::string> tokens;
        for (std::string t; ss >> t;) tokens.push_back(t);
        if (tokens.empty() || tokens[0][0] == '#') continue;
        const std::string where = path.string() + ":" + std::to_string(number);
        if (tokens.size() != 4) {
            throw FormatError(where + ": expected 4 fields (frame agent x y), got " + std::to_string(tokens.size()));
        }
        TrajnetRow r;
        bool ok = true;
        r.frame = parse_id(tokens[0], ok);
        r.agent = parse_id(tokens[1], ok);
        ok = ok && parse_number(tokens[2], r.x) && parse_number(tokens[3], r.y);
        if (!ok) throw FormatError(where + ": malformed line '" + line + "'");
        if (!std::isfinite(r.x) || !std::isfinite(r.y)) throw FormatError(where + ": non-finite position");
        rows.push_back(r);
    }
    return rows;
}

void write_trajnet_rows(const std::filesystem::path& path, const std::vector<TrajnetRow>& rows)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    char buf[128];
    for (const TrajnetRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d %d %.17g %.17g\n", r.frame, r.agent, r.x, r.y);
        out << buf;
    }
    if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

std::vector<TrajnetRow> trajectories_to_rows(const std::vector<Matrix>& trajectories, int frame_stride)
{
    std::vector<TrajnetRow> rows;
    int frame = 0;
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const Matrix& t = trajectories[i];
        for (Index k = 0; k < t.rows(); ++k) {
            rows.push_back({frame, static_cast<int>(i), t(k, 0), t(k, 1)});
            frame += frame_stride;
        }
    }
    return rows;
}

std::vector<Scene> scenes_from_rows(const std::vector<TrajnetRow>& rows, int obs_len, int horizon)
{
    if (obs_len < 2 || horizon < 1) throw ShapeError("window lengths must be positive");
    std::vector<int> order;
    std::map<int, std::vector<const TrajnetRow*>> by_agent;
    for (const TrajnetRow& r : rows) {
        auto& list = by_agent[r.agent];
        if (list.empty()) order.push_back(r.agent);
        if (!list.empty() && r.frame <= list.back()->frame) {
            throw FormatError("agent " + std::to_string(r.agent) + ": frame " + std::to_string(r.frame) +
                              " does not follow frame " + std::to_string(list.back()->frame) + " (non-monotone)");
        }
        list.push_back(&r);
    }

    int step = 0;
    for (const auto& [agent, list] : by_agent) {
        for (std::size_t i = 1; i < list.size(); ++i) {
            const int d = list[i]->frame - list[i - 1]->frame;
            if (step == 0 || d < step) step = d;
        }
    }
    if (step == 0) step = 1;

    std::vector<Track> tracks;
    for (int agent : order) {
        const auto& list = by_agent[agent];
        std::size_t begin = 0;
        for (std::size_t i = 1; i <= list.size(); ++i) {
            if (i < list.size() && list[i]->frame - list[i - 1]->frame == step) continue;
            Track t;
            t.agent_id = agent;
            t.positions.resize(static_cast<Index>(i - begin), 2);
            for (std::size_t k = begin; k < i; ++k) {
                t.frames.push_back(list[k]->frame);
                t.positions.row(static_cast<Index>(k - begin)) << list[k]->x, list[k]->y;
            }
            tracks.push_back(std::move(t));
            begin = i;
        }
    }

    const int len = obs_len + horizon;
    std::vector<Scene> scenes;
    for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
        const Track& track = tracks[ti];
        const int count = static_cast<int>(track.frames.size());
        for (int s = 0; s + len <= count; ++s) {
            Scene scene;
            scene.frame_step = step;
            scene.current_frame = track.frames[static_cast<std::size_t>(s + obs_len - 1)];
            const int lo = track.frames[static_cast<std::size_t>(s)];
            const int hi = track.frames[static_cast<std::size_t>(s + len - 1)];
            Track target;
            target.agent_id = track.agent_id;
            target.frames.assign(track.frames.begin() + s, track.frames.begin() + s + len);
            target.positions = track.positions.middleRows(s, len);
            scene.agents.push_back(std::move(target));
            for (std::size_t oi = 0; oi < tracks.size(); ++oi) {
                if (oi == ti || !position_at(tracks[oi], scene.current_frame)) continue;
                const Track& other = tracks[oi];
                const auto first = std::lower_bound(other.frames.begin(), other.frames.end(), lo);
                const auto last = std::upper_bound(other.frames.begin(), other.frames.end(), hi);
                Track n;
                n.agent_id = other.agent_id;
                n.frames.assign(first, last);
                n.positions = other.positions.middleRows(first - other.frames.begin(), last - first);
                scene.agents.push_back(std::move(n));
            }
            scenes.push_back(std::move(scene));
        }
    }
    return scenes;
}

std::vector<Scene> load_trajnet(const std::filesystem::path& path, int obs_len, int horizon)
{
    return scenes_from_rows(read_trajnet_rows(path), obs_len, horizon);
}

std::pair<std::vector<std::filesystem::path>, std::vector<std::filesystem::path>> leave_one_out_split(
    const std::vector<std::filesystem::path>& files, const std::string& held_out)
{
    std::vector<std::filesystem::path> train, test;
    for (const auto& f : files) (f.stem().string() == held_out ? test : train).push_back(f);
    if (test.empty()) {
        std::string names;
        for (const auto& f : files) names += (names.empty() ? "" : ", ") + f.stem().string();
        throw std::invalid_argument("unknown scene '" + held_out + "' (available: " + names + ")");
    }
    return {train, test};
}

double estimate_data_scale(const std::vector<Scene>& scenes, int obs_len)
{
    std::vector<double> lengths;
    for (const Scene& s : scenes) {
        const Matrix obs = observed_positions(s, obs_len);
        for (Index k = 1; k < obs.rows(); ++k) lengths.push_back((obs.row(k) - obs.row(k - 1)).norm());
    }
    if (lengths.empty()) return 1.0;
    auto mid = lengths.begin() + static_cast<std::ptrdiff_t>(lengths.size() / 2);
    std::nth_element(lengths.begin(), mid, lengths.end());
    return *mid > 1e-9 ? *mid : 1.0;
}

// ---------------------------------------------------------------------------
// Sidecars

namespace {

json density_json(const GroundTruthDensity& gt)
{
    json steps = json::array();
    for (const GaussianMixture& m : gt.steps) {
        json means = json::array();
        for (const Vec2& mu : m.means) means.push_back({mu.x(), mu.y()});
        steps.push_back({{"means", means}, {"weights", m.weights}, {"std", m.stddev}});
    }
    return steps;
}

void write_json(const std::filesystem::path& path, const json& j)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << "\n";
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& data_path)
{
    return std::filesystem::path(data_path.string() + ".json");
}

void write_simfork(const std::filesystem::path& path, const SimforkConfig& cfg, std::uint64_t seed,
                   const SimforkData& data)
{
    write_trajnet_rows(path, trajectories_to_rows(data.trajectories));
    const json config = {{"trajectories", cfg.trajectories}, {"obs_len", cfg.obs_len},
                         {"horizon", cfg.horizon},           {"step", cfg.step},
                         {"noise", cfg.noise},               {"fork_angle_deg", cfg.fork_angle_deg},
                         {"branch_prob", cfg.branch_prob}};
    json j = {{"kind", "simfork"}, {"seed", seed}, {"config", config}, {"frame_stride", 10}};
    if (cfg.noise > 0.0) j["ground_truth"] = density_json(data.density);
    j["branch"] = data.branch;
    write_json(sidecar_path(path), j);
}

void write_unicycle(const std::filesystem::path& path, const UnicycleConfig& cfg, std::uint64_t seed,
                    const std::vector<Matrix>& trajectories)
{
    write_trajnet_rows(path, trajectories_to_rows(trajectories));
    const json config = {{"trajectories", cfg.trajectories}, {"length", cfg.length},
                         {"speed", cfg.speed},               {"heading", cfg.heading},
                         {"yaw_rate", cfg.yaw_rate},         {"speed_noise", cfg.speed_noise},
                         {"yaw_noise", cfg.yaw_noise},       {"dt", cfg.dt}};
    write_json(sidecar_path(path), {{"kind", "unicycle"}, {"seed", seed}, {"config", config}, {"frame_stride", 10}});
}

std::optional<SimforkSidecar> read_simfork_sidecar(const std::filesystem::path& data_path)
{
    const auto path = sidecar_path(data_path);
    if (!std::filesystem::exists(path)) return std::nullopt;
    std::ifstream in(path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
    if (j.value("kind", "") != "simfork") return std::nullopt;
    try {
        SimforkSidecar s;
        const json& c = j.at("config");
        s.seed = j.at("seed").get<std::uint64_t>();
        s.config.trajectories = c.at("trajectories").get<int>();
        s.config.obs_len = c.at("obs_len").get<int>();
        s.config.horizon = c.at("horizon").get<int>();
        s.config.step = c.at("step").get<double>();
        s.config.noise = c.at("noise").get<double>();
        s.config.fork_angle_deg = c.at("fork_angle_deg").get<double>();
        s.config.branch_prob = c.at("branch_prob").get<double>();
        if (j.contains("ground_truth")) {
            for (const json& step : j.at("ground_truth")) {
                GaussianMixture m;
                for (const json& mu : step.at("means")) m.means.emplace_back(mu.at(0).get<double>(), mu.at(1).get<double>());
                m.weights = step.at("weights").get<std::vector<double>>();
                m.stddev = step.at("std").get<double>();
                s.density.steps.push_back(std::move(m));
            }
        }
        return s;
    } catch (const json::exception& e) {
        throw FormatError("'" + path.string() + "': " + e.what());
    }
}

}  // namespace flowchain
