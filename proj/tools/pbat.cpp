// pbat: command-line front end (synth, train, eval, gradcheck, export-patterns).

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "pbat/config.hpp"
#include "pbat/data.hpp"
#include "pbat/eval.hpp"
#include "pbat/model.hpp"
#include "pbat/training.hpp"

namespace {

using namespace pbat;

// Config vocab sizes win when set; they must cover every id in the data.
ModelDims resolve_dims(ModelDims dims, const Vocab& data) {
    auto pick = [](std::uint32_t configured, std::uint32_t seen, const char* name) {
        if (configured == 0) return seen;
        if (configured < seen) {
            throw std::invalid_argument(std::string("config ") + name + " = " + std::to_string(configured) +
                                        " is smaller than the data needs (" + std::to_string(seen) + ")");
        }
        return configured;
    };
    dims.num_users = pick(dims.num_users, data.num_users, "num_users");
    dims.num_items = pick(dims.num_items, data.num_items, "num_items");
    dims.num_behaviors = pick(dims.num_behaviors, data.num_behaviors, "num_behaviors");
    return dims;
}

SplitDataset load_split(const std::string& path, const Vocab& vocab, std::size_t L) {
    const InteractionLog log = ingest_tsv(path);
    const auto seqs = build_sequences(log.interactions, vocab, L);
    if (seqs.empty()) throw std::runtime_error("no user in " + path + " has at least 3 interactions");
    return leave_one_out_split(seqs, vocab);
}

int run_synth(const SynthConfig& cfg, const std::string& out, const std::string& types_out) {
    const SynthDataset ds = synth_generate(cfg);
    write_tsv(out, ds.interactions);
    if (!types_out.empty()) {
        std::ofstream t(types_out);
        if (!t) throw std::runtime_error("cannot write " + types_out);
        for (std::size_t u = 0; u < ds.user_types.size(); ++u)
            t << u << '\t' << (ds.user_types[u] == UserType::A ? 'A' : 'B') << '\n';
    }
    std::cerr << "wrote " << ds.interactions.size() << " interactions to " << out << "\n";
    return 0;
}

int run_train(const std::string& data, const std::string& config_path, const std::string& out,
              std::optional<std::uint64_t> seed) {
    Config cfg = load_config(config_path);
    if (seed) cfg.train.seed = *seed;
    const InteractionLog log = ingest_tsv(data);
    const ModelDims dims = resolve_dims(cfg.model, log.vocab);
    const Vocab vocab{dims.num_users, dims.num_items, dims.num_behaviors};
    const auto seqs = build_sequences(log.interactions, vocab, dims.L);
    if (seqs.empty()) throw std::runtime_error("no user in " + data + " has at least 3 interactions");
    const SplitDataset split = leave_one_out_split(seqs, vocab);

    ModelParams params = init_params(dims, cfg.train.seed);
    AdamState adam = make_adam(params, cfg.train.lr);
    for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
        const LossReport r = train_epoch(split, params, adam, cfg.train, e);
        std::cout << loss_report_json(r) << std::endl;
    }
    save_checkpoint(params, out);
    return 0;
}

int run_eval(const std::string& data, const std::string& ckpt, const std::string& candidates, std::uint64_t seed,
             bool json) {
    const ModelParams params = load_checkpoint(ckpt);
    CandidateMode mode = CandidateMode::parse(candidates);
    mode.seed = seed;
    const SplitDataset split = load_split(data, params.vocab(), params.dims.L);
    const MetricsReport m = evaluate(split, params, mode);
    if (json) {
        nlohmann::json j{{"hr5", m.hr5}, {"hr10", m.hr10}, {"ndcg5", m.ndcg5}, {"ndcg10", m.ndcg10}, {"users", m.users}};
        std::cout << j.dump() << std::endl;
    } else {
        std::cout << std::fixed << std::setprecision(4) << "users   " << m.users << "\nHR@5    " << m.hr5
                  << "\nHR@10   " << m.hr10 << "\nNDCG@5  " << m.ndcg5 << "\nNDCG@10 " << m.ndcg10 << "\n";
    }
    return 0;
}

int run_gradcheck(const std::string& config_path, double tol, double jitter) {
    Config cfg = load_config(config_path);
    ModelDims dims = cfg.model;
    if (dims.num_users == 0) dims.num_users = 3;
    if (dims.num_items == 0) dims.num_items = 20;
    if (dims.num_behaviors == 0) dims.num_behaviors = 3;

    SynthConfig sc;
    sc.num_users = dims.num_users;
    sc.num_items = dims.num_items;
    sc.num_behaviors = dims.num_behaviors;
    sc.length = static_cast<std::uint32_t>(dims.L);
    sc.seed = cfg.train.seed;
    sc.rule = SynthRule::Random;
    const SynthDataset ds = synth_generate(sc);
    const Vocab vocab{dims.num_users, dims.num_items, dims.num_behaviors};
    const auto seqs = build_sequences(ds.interactions, vocab, dims.L);

    MaskedBatch batch;
    for (const auto& s : seqs) {
        Rng rng = row_rng(cfg.train.seed, 0, s.user);
        batch.push_back(make_training_row(s, cfg.train.rho, vocab, rng));
    }
    ModelParams params = init_params(dims, cfg.train.seed);
    if (jitter > 0.0) perturb_params(params, jitter, cfg.train.seed + 1);
    GradCheckOptions opt;
    opt.tolerance = tol;
    const GradCheckReport report = grad_check(params, batch, opt);

    double worst = 0.0;
    for (const auto& g : report.groups) {
        std::cout << std::left << std::setw(36) << g.name << " checked " << std::setw(3) << g.checked
                  << " unresolved " << std::setw(3) << g.unresolved << " max rel err " << std::scientific << std::setprecision(3) << g.max_rel_error << std::defaultfloat
                  << "\n";
        worst = std::max(worst, g.max_rel_error);
    }
    std::cout << "groups " << report.groups.size() << ", worst rel err " << std::scientific << worst
              << std::defaultfloat << ", tolerance " << tol << "\n";
    for (const auto& f : report.failures()) std::cout << "FAIL " << f << "\n";
    std::cout << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << std::endl;
    return report.passed() ? 0 : 1;
}

int run_export(const std::string& ckpt, std::optional<std::uint32_t> user, const std::string& out) {
    const ModelParams params = load_checkpoint(ckpt);
    const Tensor m = export_behavior_matrix(params, user);
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    f << matrix_csv(m);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Gaussian multi-behavior sequential recommender"};
    app.require_subcommand(1);

    SynthConfig sc;
    std::string synth_out, synth_rule = "planted", synth_types;
    auto* synth = app.add_subcommand("synth", "generate a synthetic interaction log");
    synth->add_option("--out", synth_out, "output TSV")->required();
    synth->add_option("--users", sc.num_users)->required();
    synth->add_option("--items", sc.num_items)->required();
    synth->add_option("--behaviors", sc.num_behaviors)->required();
    synth->add_option("--seed", sc.seed)->required();
    synth->add_option("--rule", synth_rule, "planted or random")->check(CLI::IsMember({"planted", "random"}));
    synth->add_option("--length", sc.length, "interactions per user");
    synth->add_option("--types", synth_types, "write user<TAB>type (A/B) here");

    std::string data, config, ckpt;
    std::optional<std::uint64_t> train_seed;
    auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
    train->add_option("--data", data)->required();
    train->add_option("--config", config)->required();
    train->add_option("--out", ckpt)->required();
    train->add_option("--seed", train_seed);

    std::string candidates = "all";
    std::uint64_t eval_seed = 0;
    bool json = false;
    auto* eval = app.add_subcommand("eval", "leave-one-out evaluation on the test targets");
    eval->add_option("--data", data)->required();
    eval->add_option("--ckpt", ckpt)->required();
    eval->add_option("--candidates", candidates, "all or sampled:N");
    eval->add_option("--seed", eval_seed, "candidate sampling seed");
    eval->add_flag("--json", json);

    double tol = 1e-4;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");
    gradcheck->add_option("--config", config)->required();
    gradcheck->add_option("--tol", tol);
    double jitter = 0.5;
    gradcheck->add_option("--jitter", jitter, "std of noise added to the initial parameters (0 = check at init)");

    std::optional<std::uint32_t> user;
    std::string csv_out;
    auto* exp = app.add_subcommand("export-patterns", "write the behavior dependency matrix as CSV");
    exp->add_option("--ckpt", ckpt)->required();
    exp->add_option("--user", user);
    exp->add_option("--out", csv_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            sc.rule = synth_rule == "planted" ? SynthRule::Planted : SynthRule::Random;
            return run_synth(sc, synth_out, synth_types);
        }
        if (*train) return run_train(data, config, ckpt, train_seed);
        if (*eval) return run_eval(data, ckpt, candidates, eval_seed, json);
        if (*gradcheck) return run_gradcheck(config, tol, jitter);
        if (*exp) return run_export(ckpt, user, csv_out);
    } catch (const std::exception& e) {
        std::cerr << "pbat: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
