#pragma once

// Experiment harness: INI configuration, route presets, confidence
// collection, policy evaluation, the budget-sweep report, and the command
// entry points the CLI wraps.

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "exitgrid/engine.hpp"
#include "exitgrid/train.hpp"

namespace exitgrid {

// ---------------------------------------------------------------------------
// INI configuration

struct IniFile {
    std::map<std::string, std::map<std::string, std::string>> sections;

    static IniFile parse_string(const std::string& text, const std::string& origin = "config") {
        IniFile ini;
        std::istringstream is(text);
        std::string line, section;
        int line_no = 0;
        while (std::getline(is, line)) {
            ++line_no;
            auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(line_no) + ": unterminated section");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty section name");
                ini.sections[section]; // materialize even if empty
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key=value, got '" +
                                  line + "'");
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(line_no) + ": key outside any section");
            ini.sections[section][key] = value;
        }
        return ini;
    }

    static IniFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config file: " + path);
        std::ostringstream buf;
        buf << f.rdbuf();
        return parse_string(buf.str(), path);
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }
};

namespace detail {

class SectionReader {
public:
    SectionReader(const IniFile& ini, const std::string& name) : name_(name) {
        auto it = ini.sections.find(name);
        if (it != ini.sections.end()) kv_ = &it->second;
    }
    ~SectionReader() = default;

    std::string str(const std::string& key, const std::string& dflt) {
        mark(key);
        if (!kv_) return dflt;
        auto it = kv_->find(key);
        return it == kv_->end() ? dflt : it->second;
    }
    int integer(const std::string& key, int dflt) {
        return parse<int>(key, dflt, [](const std::string& s) { return std::stoi(s); });
    }
    uint64_t u64(const std::string& key, uint64_t dflt) {
        return parse<uint64_t>(key, dflt, [](const std::string& s) { return std::stoull(s); });
    }
    double real(const std::string& key, double dflt) {
        return parse<double>(key, dflt, [](const std::string& s) { return std::stod(s); });
    }
    bool flag(const std::string& key, bool dflt) {
        std::string v = str(key, dflt ? "on" : "off");
        if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
        if (v == "off" || v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("[" + name_ + "] " + key + ": expected on|off, got '" + v + "'");
    }
    // Every key must have been asked for by now.
    void finish() const {
        if (!kv_) return;
        for (const auto& [key, value] : *kv_)
            if (!seen_.count(key))
                throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
    }

private:
    template <typename T, typename Fn>
    T parse(const std::string& key, T dflt, Fn fn) {
        std::string v = str(key, "");
        if (v.empty()) return dflt;
        try {
            return fn(v);
        } catch (const std::exception&) {
            throw ConfigError("[" + name_ + "] " + key + ": cannot parse '" + v + "'");
        }
    }
    void mark(const std::string& key) { seen_.insert(key); }

    std::string name_;
    const std::map<std::string, std::string>* kv_ = nullptr;
    std::set<std::string> seen_;
};

} // namespace detail

struct PolicyConfig {
    double budget = 0.0;      // Q for `calibrate`; 0 means "not set"
    std::string budgets;      // list or "auto" for `sweep`
    std::string calib_split = "val";
    std::string eval_split = "test";
    double epsilon_points = 0.5; // accuracy slack when picking Q*
};

struct GridConfig {
    int n_sets = 8;
    int set_size = 2;
    std::string blocks = "8k3s2p1,12k3s2p1,16k3s1p1,16k3s2p1,16k3s1p1";
    std::string checkpoints; // empty -> route preset
    std::string route = "joint";
    bool permute = true;
    bool shift = true;
    int shift_num = 1;
    int shift_den = 8;
};

struct AppConfig {
    DatasetManifest data;
    GridConfig grid;
    TrainConfig train;
    PolicyConfig policy;
};

inline AppConfig load_app_config(const IniFile& ini) {
    for (const auto& [name, kv] : ini.sections)
        if (name != "data" && name != "grid" && name != "train" && name != "policy")
            throw ConfigError("unknown config section [" + name + "]");
    AppConfig cfg;
    {
        detail::SectionReader s(ini, "data");
        cfg.data.seed = s.u64("seed", cfg.data.seed);
        cfg.data.num_classes = s.integer("num_classes", cfg.data.num_classes);
        cfg.data.n_train = s.integer("n_train", cfg.data.n_train);
        cfg.data.n_val = s.integer("n_val", cfg.data.n_val);
        cfg.data.n_test = s.integer("n_test", cfg.data.n_test);
        cfg.data.video_length = s.integer("video_length", cfg.data.video_length);
        cfg.data.channels = s.integer("channels", cfg.data.channels);
        cfg.data.height = s.integer("height", cfg.data.height);
        cfg.data.width = s.integer("width", cfg.data.width);
        cfg.data.noise = s.real("noise", cfg.data.noise);
        s.finish();
    }
    {
        detail::SectionReader s(ini, "grid");
        cfg.grid.n_sets = s.integer("n_sets", cfg.grid.n_sets);
        cfg.grid.set_size = s.integer("set_size", cfg.grid.set_size);
        cfg.grid.blocks = s.str("blocks", cfg.grid.blocks);
        cfg.grid.checkpoints = s.str("checkpoints", cfg.grid.checkpoints);
        cfg.grid.route = s.str("route", cfg.grid.route);
        cfg.grid.permute = s.flag("permute", cfg.grid.permute);
        cfg.grid.shift = s.flag("shift", cfg.grid.shift);
        cfg.grid.shift_num = s.integer("shift_num", cfg.grid.shift_num);
        cfg.grid.shift_den = s.integer("shift_den", cfg.grid.shift_den);
        s.finish();
    }
    {
        detail::SectionReader s(ini, "train");
        cfg.train.epochs = s.integer("epochs", cfg.train.epochs);
        cfg.train.batch_size = s.integer("batch_size", cfg.train.batch_size);
        cfg.train.lr = s.real("lr", cfg.train.lr);
        cfg.train.momentum = s.real("momentum", cfg.train.momentum);
        cfg.train.weight_decay = s.real("weight_decay", cfg.train.weight_decay);
        cfg.train.seed = s.u64("seed", cfg.train.seed);
        cfg.train.threads = s.integer("threads", cfg.train.threads);
        s.finish();
    }
    {
        detail::SectionReader s(ini, "policy");
        cfg.policy.budget = s.real("budget", cfg.policy.budget);
        cfg.policy.budgets = s.str("budgets", cfg.policy.budgets);
        cfg.policy.calib_split = s.str("calib_split", cfg.policy.calib_split);
        cfg.policy.eval_split = s.str("eval_split", cfg.policy.eval_split);
        cfg.policy.epsilon_points = s.real("epsilon", cfg.policy.epsilon_points);
        s.finish();
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Grid construction

// Block token: OUT k K s S p P with an optional trailing 'r' (ReLU, default)
// or 'n' (linear), e.g. "12k3s2p1" or "16k3s1p1n".
inline std::vector<ConvBlockSpec> parse_blocks(const std::string& text, int in_channels) {
    std::vector<ConvBlockSpec> specs;
    std::istringstream is(text);
    std::string tok;
    int c = in_channels;
    while (std::getline(is, tok, ',')) {
        tok = IniFile::trim(tok);
        if (tok.empty()) continue;
        ConvBlockSpec b;
        b.in_channels = c;
        size_t pos = 0;
        auto read_int = [&](const std::string& what) {
            size_t start = pos;
            while (pos < tok.size() && std::isdigit(static_cast<unsigned char>(tok[pos]))) ++pos;
            if (start == pos)
                throw ConfigError("block '" + tok + "': expected " + what + " at position " +
                                  std::to_string(start));
            return std::stoi(tok.substr(start, pos - start));
        };
        b.out_channels = read_int("output channels");
        while (pos < tok.size()) {
            char key = tok[pos++];
            switch (key) {
                case 'k': b.kernel_h = b.kernel_w = read_int("kernel"); break;
                case 's': b.stride = read_int("stride"); break;
                case 'p': b.padding = read_int("padding"); break;
                case 'r': b.has_relu = true; break;
                case 'n': b.has_relu = false; break;
                default:
                    throw ConfigError("block '" + tok + "': unknown field '" + std::string(1, key) + "'");
            }
        }
        specs.push_back(b);
        c = b.out_channels;
    }
    if (specs.empty()) throw ConfigError("no blocks in '" + text + "'");
    return specs;
}

inline std::vector<GridCoord> parse_checkpoints(const std::string& text) {
    std::vector<GridCoord> cps;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = IniFile::trim(tok);
        if (tok.empty()) continue;
        auto colon = tok.find(':');
        if (colon == std::string::npos)
            throw ConfigError("checkpoint '" + tok + "': expected set:block");
        try {
            cps.push_back(GridCoord{std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1))});
        } catch (const std::exception&) {
            throw ConfigError("checkpoint '" + tok + "': cannot parse coordinates");
        }
    }
    if (cps.empty()) throw ConfigError("no checkpoints in '" + text + "'");
    return cps;
}

// Preset checkpoint routes. depth: every block at the last frame-set.
// input: the last block at every frame-set. joint: a diagonal staircase with
// min(N, M) exits.
inline std::vector<GridCoord> route_preset(RouteKind route, int n_sets, int n_blocks) {
    std::vector<GridCoord> cps;
    switch (route) {
        case RouteKind::DepthWise:
            for (int m = 0; m < n_blocks; ++m) cps.push_back(GridCoord{n_sets - 1, m});
            break;
        case RouteKind::InputWise:
            for (int n = 0; n < n_sets; ++n) cps.push_back(GridCoord{n, n_blocks - 1});
            break;
        case RouteKind::Joint: {
            const int k_count = std::min(n_sets, n_blocks);
            for (int k = 1; k <= k_count; ++k)
                cps.push_back(GridCoord{(k * n_sets + k_count - 1) / k_count - 1,
                                        (k * n_blocks + k_count - 1) / k_count - 1});
            break;
        }
    }
    return cps;
}

inline CheckpointGrid build_grid(const GridConfig& gc, const DatasetManifest& data) {
    CheckpointGrid g;
    g.n_sets = gc.n_sets;
    g.set_size = gc.set_size;
    g.frame_channels = data.channels;
    g.frame_h = data.height;
    g.frame_w = data.width;
    g.blocks = parse_blocks(gc.blocks, data.channels);
    g.route = route_from_name(gc.route);
    g.checkpoints = gc.checkpoints.empty() ? route_preset(g.route, g.n_sets, g.n_blocks())
                                           : parse_checkpoints(gc.checkpoints);
    g.heads = default_heads(g.blocks, g.checkpoints, data.num_classes);
    g.shift = gc.shift ? ShiftSpec::everywhere(g.n_blocks(), gc.shift_num, gc.shift_den)
                       : ShiftSpec::disabled();
    g.permute_inputs = gc.permute;
    g.require_valid();
    return g;
}

// ---------------------------------------------------------------------------
// Evaluation

struct ConfidenceData {
    std::vector<std::vector<double>> conf; // [video][checkpoint] max softmax
    std::vector<std::vector<int>> pred;    // [video][checkpoint] argmax
    std::vector<int> labels;
};

inline ConfidenceData collect_confidences(const CheckpointGrid& grid, const ModelParams& params,
                                          const std::vector<SyntheticVideo>& videos) {
    const PermutationPlan plan = plan_for_grid(grid);
    ConfidenceData out;
    out.conf.reserve(videos.size());
    out.pred.reserve(videos.size());
    for (const auto& v : videos) {
        std::vector<FrameSet> sets = video_frame_sets(v, grid, plan);
        CheckpointOutputs co = run_all_checkpoints(grid, params, sets);
        std::vector<double> conf_row;
        std::vector<int> pred_row;
        for (const Tensor& logits : co.logits) {
            Tensor s = softmax(logits);
            int a = argmax(s);
            conf_row.push_back(s[static_cast<size_t>(a)]);
            pred_row.push_back(a);
        }
        out.conf.push_back(std::move(conf_row));
        out.pred.push_back(std::move(pred_row));
        out.labels.push_back(v.label);
    }
    return out;
}

inline std::vector<Decision> run_split(const CheckpointGrid& grid, const ModelParams& params,
                                       const std::vector<SyntheticVideo>& videos,
                                       const ExitPolicy& policy) {
    const PermutationPlan plan = plan_for_grid(grid);
    std::vector<Decision> out;
    out.reserve(videos.size());
    for (const auto& v : videos) {
        std::vector<FrameSet> sets = video_frame_sets(v, grid, plan);
        out.push_back(run_progressive(grid, params, sets, policy));
    }
    return out;
}

struct EvalRow {
    double budget = 0.0; // Q
    double q = 1.0;
    uint64_t total_flops = 0;
    size_t n = 0;
    double avg_flops = 0.0;
    double top1 = 0.0;
    std::vector<uint64_t> exit_counts;
};

inline EvalRow summarize_decisions(const std::vector<Decision>& decisions,
                                   const std::vector<SyntheticVideo>& videos,
                                   const ExitPolicy& policy) {
    if (decisions.size() != videos.size())
        throw ConfigError("summarize_decisions: decision/video count mismatch");
    EvalRow row;
    row.budget = policy.budget;
    row.q = policy.q;
    row.n = decisions.size();
    row.exit_counts.assign(static_cast<size_t>(policy.n_checkpoints()), 0);
    size_t correct = 0;
    for (size_t i = 0; i < decisions.size(); ++i) {
        const Decision& d = decisions[i];
        row.total_flops += d.flops;
        row.exit_counts[static_cast<size_t>(d.exit_checkpoint)]++;
        if (d.label == videos[i].label) correct++;
    }
    row.avg_flops = static_cast<double>(row.total_flops) / static_cast<double>(row.n);
    row.top1 = static_cast<double>(correct) / static_cast<double>(row.n);
    return row;
}

inline EvalRow evaluate_policy(const CheckpointGrid& grid, const ModelParams& params,
                               const std::vector<SyntheticVideo>& videos, const ExitPolicy& policy) {
    return summarize_decisions(run_split(grid, params, videos, policy), videos, policy);
}

// Smallest budget whose accuracy is within eps_points (percentage points) of
// the best row. Returns an index into rows.
inline size_t pick_knee(const std::vector<EvalRow>& rows, double eps_points) {
    if (rows.empty()) throw ConfigError("pick_knee: no rows");
    double best = 0.0;
    for (const auto& r : rows) best = std::max(best, r.top1);
    size_t pick = 0;
    double pick_budget = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].top1 >= best - eps_points / 100.0 && rows[i].budget < pick_budget) {
            pick = i;
            pick_budget = rows[i].budget;
        }
    }
    return pick;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<EvalRow>& rows, int k_count,
                            const std::vector<std::string>& metadata,
                            std::optional<size_t> knee_index) {
    for (const auto& m : metadata) os << "# " << m << "\n";
    os << "Q,q,avg_flops,top1";
    for (int k = 0; k < k_count; ++k) os << ",exit_" << k;
    os << "\n";
    for (const auto& r : rows) {
        os << detail::format_double(r.budget) << "," << detail::format_double(r.q) << ","
           << detail::format_double(r.avg_flops) << "," << detail::format_double(r.top1);
        for (uint64_t c : r.exit_counts) os << "," << c;
        os << "\n";
    }
    if (knee_index)
        os << "# Q* " << detail::format_double(rows[*knee_index].budget) << " top1 "
           << detail::format_double(rows[*knee_index].top1) << "\n";
}

// ---------------------------------------------------------------------------
// Commands (the CLI wraps these; tests call them directly)

inline void run_gen_data(const AppConfig& cfg, const std::string& out_path, std::ostream& log) {
    Dataset ds = generate_dataset(cfg.data);
    save_dataset(out_path, ds);
    log << "wrote " << out_path << ": " << ds.train.size() << " train / " << ds.val.size()
        << " val / " << ds.test.size() << " test videos, " << cfg.data.num_classes << " classes\n";
}

inline void check_dataset_matches(const AppConfig& cfg, const DatasetManifest& found) {
    if (found.channels != cfg.data.channels || found.height != cfg.data.height ||
        found.width != cfg.data.width)
        throw ConfigError("dataset frame dims do not match the configured grid input");
}

inline TrainStats run_train(const AppConfig& cfg, const std::string& dataset_path,
                            const std::string& model_out, std::ostream& log) {
    Dataset ds = load_dataset(dataset_path);
    check_dataset_matches(cfg, ds.manifest);
    AppConfig effective = cfg;
    effective.data = ds.manifest; // the file wins over the config's [data]
    CheckpointGrid grid = build_grid(effective.grid, effective.data);
    ModelParams params = init_params(grid, cfg.train.seed);
    TrainStats stats = train_model(grid, params, ds.train, cfg.train, &log);
    save_model(model_out, grid, params);
    char hash[32];
    std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(grid_hash(grid)));
    log << "wrote " << model_out << " (grid " << hash << ", " << params.count() << " parameters)\n";
    return stats;
}

inline ExitPolicy run_calibrate(const std::string& model_path, const std::string& dataset_path,
                                const std::string& split, double budget,
                                const std::string& policy_out, std::ostream& log) {
    LoadedModel model = load_model(model_path);
    Dataset ds = load_dataset(dataset_path);
    const std::vector<SyntheticVideo>& videos = ds.split(split);
    if (videos.empty()) throw ConfigError("calibration split '" + split + "' is empty");

    std::vector<uint64_t> costs = flops_table(model.grid);
    SolveResult sr = solve_q(budget, costs);
    if (sr.budget_above_range)
        log << "note: budget " << budget
            << " exceeds the dynamic range; using the full-inference regime (smallest q)\n";
    ExitModel em = exit_distribution(sr.q, model.grid.n_checkpoints());
    ConfidenceData conf = collect_confidences(model.grid, model.params, videos);

    ExitPolicy policy;
    policy.thresholds = calibrate_thresholds(conf.conf, em);
    policy.costs = costs;
    policy.budget = budget;
    policy.q = sr.q;
    policy.grid_hash = grid_hash(model.grid);
    policy.calib_split = split;
    save_policy(policy_out, policy);

    std::vector<size_t> replay = replay_exit_counts(conf.conf, policy.thresholds);
    log << "wrote " << policy_out << ": q " << detail::format_double(sr.q) << ", exits over " << split
        << " (" << videos.size() << " videos):";
    for (size_t c : replay) log << " " << c;
    log << "\n";
    return policy;
}

inline EvalRow run_eval(const std::string& model_path, const std::string& policy_path,
                        const std::string& dataset_path, const std::string& split,
                        std::ostream& log) {
    LoadedModel model = load_model(model_path);
    ExitPolicy policy = load_policy(policy_path);
    const uint64_t hash = grid_hash(model.grid);
    if (policy.grid_hash != hash)
        throw ConfigError("policy was calibrated for a different grid (hash mismatch); refusing to evaluate");
    if (policy.calib_split == split)
        log << "warning: evaluating on '" << split << "', the same split the policy was calibrated on\n";
    Dataset ds = load_dataset(dataset_path);
    const std::vector<SyntheticVideo>& videos = ds.split(split);
    if (videos.empty()) throw ConfigError("evaluation split '" + split + "' is empty");
    EvalRow row = evaluate_policy(model.grid, model.params, videos, policy);
    log << "split " << split << ": top1 " << row.top1 << ", avg FLOPs " << row.avg_flops
        << " (budget " << policy.budget << "), exits";
    for (uint64_t c : row.exit_counts) log << " " << c;
    log << "\n";
    return row;
}

inline std::vector<double> parse_budget_list(const std::string& text,
                                             const std::vector<uint64_t>& costs) {
    if (text.empty() || text == "auto") {
        const double g_last = static_cast<double>(costs.back());
        const double g_first = static_cast<double>(costs.front());
        std::vector<double> budgets;
        for (double f : {0.3, 0.4, 0.5, 0.6, 0.7, 0.85, 1.0})
            budgets.push_back(std::max(g_first, f * g_last));
        return budgets;
    }
    std::vector<double> budgets;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        tok = IniFile::trim(tok);
        if (tok.empty()) continue;
        try {
            budgets.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("cannot parse budget '" + tok + "'");
        }
    }
    if (budgets.empty()) throw ConfigError("no budgets in '" + text + "'");
    return budgets;
}

struct SweepResult {
    std::vector<EvalRow> rows;
    std::vector<std::string> skipped;
    size_t knee_index = 0;
};

inline SweepResult run_sweep(const std::string& model_path, const std::string& dataset_path,
                             const std::string& budgets_text, const std::string& calib_split,
                             const std::string& eval_split, double eps_points,
                             const std::string& csv_out, std::ostream& log) {
    LoadedModel model = load_model(model_path);
    Dataset ds = load_dataset(dataset_path);
    const std::vector<SyntheticVideo>& calib_videos = ds.split(calib_split);
    const std::vector<SyntheticVideo>& eval_videos = ds.split(eval_split);
    if (calib_videos.empty() || eval_videos.empty())
        throw ConfigError("sweep needs non-empty calibration and evaluation splits");
    if (calib_split == eval_split)
        log << "warning: calibrating and evaluating on the same split '" << calib_split << "'\n";

    std::vector<uint64_t> costs = flops_table(model.grid);
    std::vector<double> budgets = parse_budget_list(budgets_text, costs);
    ConfidenceData conf = collect_confidences(model.grid, model.params, calib_videos);
    SweepCalibration cal = sweep_budgets(budgets, conf.conf, costs);
    for (const auto& msg : cal.skipped) log << "warning: " << msg << "\n";
    if (cal.policies.empty()) throw ConfigError("no feasible budget in the sweep");

    SweepResult result;
    result.skipped = cal.skipped;
    const uint64_t hash = grid_hash(model.grid);
    for (auto& policy : cal.policies) {
        policy.grid_hash = hash;
        policy.calib_split = calib_split;
        result.rows.push_back(evaluate_policy(model.grid, model.params, eval_videos, policy));
    }
    result.knee_index = pick_knee(result.rows, eps_points);

    char hash_hex[32];
    std::snprintf(hash_hex, sizeof(hash_hex), "%016llx", static_cast<unsigned long long>(hash));
    std::vector<std::string> metadata{
        std::string("model ") + model_path + " grid " + hash_hex,
        std::string("dataset ") + dataset_path,
        std::string("calib_split ") + calib_split + " eval_split " + eval_split,
    };
    if (!csv_out.empty()) {
        std::ofstream f(csv_out);
        if (!f) throw IoError("cannot open CSV for writing: " + csv_out);
        write_sweep_csv(f, result.rows, model.grid.n_checkpoints(), metadata, result.knee_index);
        if (!f) throw IoError("failed writing CSV: " + csv_out);
        log << "wrote " << csv_out << "\n";
    } else {
        write_sweep_csv(log, result.rows, model.grid.n_checkpoints(), metadata, result.knee_index);
    }
    const EvalRow& knee = result.rows[result.knee_index];
    log << "Q* " << detail::format_double(knee.budget) << ": top1 " << knee.top1 << ", avg FLOPs "
        << knee.avg_flops << "\n";
    return result;
}

} // namespace exitgrid
