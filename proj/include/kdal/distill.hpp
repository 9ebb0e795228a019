#pragma once

// Prompt templates and candidate generation by the teacher model.

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kdal/error.hpp"
#include "kdal/log.hpp"
#include "kdal/parallel.hpp"
#include "kdal/pool_store.hpp"
#include "kdal/providers.hpp"

namespace kdal {

inline constexpr std::string_view input_placeholder = "{input}";

// A validated template. The input block holds the placeholder exactly once
// and no other field may contain it; this is checked on construction so a
// bad template never reaches the render path.
class Template {
public:
    Template(std::string task_directive, std::string instruction, std::string input_block = "Input: {input}",
             std::optional<std::string> preamble = std::nullopt)
        : directive_(std::move(task_directive)),
          instruction_(std::move(instruction)),
          block_(std::move(input_block)),
          preamble_(std::move(preamble)) {
        if (directive_.empty()) throw ConfigError("template task_directive is empty");
        if (instruction_.empty()) throw ConfigError("template instruction is empty");
        const auto occurrences = count(block_);
        if (occurrences != 1) {
            throw ConfigError("template input block must contain {input} exactly once, found " +
                              std::to_string(occurrences));
        }
        if (count(directive_) || count(instruction_) || (preamble_ && count(*preamble_))) {
            throw ConfigError("{input} may only appear in the input block");
        }
        const auto at = block_.find(input_placeholder);
        prefix_ = block_.substr(0, at);
        suffix_ = block_.substr(at + input_placeholder.size());
    }

    const std::string& task_directive() const { return directive_; }
    const std::string& instruction() const { return instruction_; }
    const std::string& input_block() const { return block_; }
    const std::optional<std::string>& preamble() const { return preamble_; }

    // Sections separated by blank lines; the input is spliced in verbatim.
    std::string render(std::string_view x) const {
        std::string out;
        if (preamble_ && !preamble_->empty()) out += *preamble_ + "\n\n";
        out += directive_;
        out += "\n\n";
        out += instruction_;
        out += "\n\n";
        out += prefix_;
        out += x;
        out += suffix_;
        return out;
    }

    static Template counter_narration() {
        return Template("Write a counter-narration to the input text.",
                        "Ensure the generated output respects social acceptability: be polite and respectful, "
                        "and do not be aggressive.");
    }

    static Template style_transfer() {
        return Template("Style transfer the input text from offensive to inoffensive, keeping its intent.",
                        "Ensure the generated output respects social acceptability: be polite and respectful, "
                        "and do not be aggressive.");
    }

    static Template builtin(std::string_view name) {
        if (name == "counter_narration") return counter_narration();
        if (name == "style_transfer") return style_transfer();
        throw ConfigError("unknown built-in template: " + std::string(name));
    }

    static Template from_json(const nlohmann::json& j) {
        if (j.contains("builtin")) return builtin(j.at("builtin").get<std::string>());
        std::optional<std::string> preamble;
        if (j.contains("preamble") && !j.at("preamble").is_null()) preamble = j.at("preamble").get<std::string>();
        try {
            return Template(j.at("task_directive").get<std::string>(), j.at("instruction").get<std::string>(),
                            j.value("input_block", std::string("Input: {input}")), preamble);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad template: ") + e.what());
        }
    }

private:
    static std::size_t count(std::string_view s) {
        std::size_t n = 0;
        for (auto at = s.find(input_placeholder); at != std::string_view::npos;
             at = s.find(input_placeholder, at + input_placeholder.size())) {
            ++n;
        }
        return n;
    }

    std::string directive_;
    std::string instruction_;
    std::string block_;
    std::optional<std::string> preamble_;
    std::string prefix_;
    std::string suffix_;
};

struct DistillOptions {
    double temperature = 0.7;
    std::string model;
    std::size_t concurrency = 4;
    double rate_limit_per_sec = 0.0;
    RetryPolicy retry;
    // Off for reproducible runs, where wall-clock latency would leak into
    // snapshots.
    bool record_latency = true;
    // Iteration stamped on candidates; defaults to the loop state's.
    std::optional<std::int64_t> iteration;
};

struct DistillOutcome {
    std::vector<DistillationCandidate> candidates;  // input order
    std::vector<FailureRecord> failures;
};

inline ChatRequest distill_request(const std::string& prompt, const DistillOptions& opts) {
    return {{{"user", prompt}}, opts.temperature, opts.model};
}

// Each selected instance either moves to distilled with one live candidate
// or, after the retries are spent, is released back to unlabeled with a
// distillation_failure record. Configuration errors abort the batch.
inline DistillOutcome distill_batch(PoolStore& pool, const std::vector<std::string>& ids, const Template& tmpl,
                                    TeacherProvider& teacher, const DistillOptions& opts = {}) {
    DistillOutcome out;
    if (ids.empty()) return out;
    std::vector<Instance> insts;
    for (const auto& id : ids) {
        auto inst = pool.instance(id);
        if (inst.state != InstanceState::selected) {
            throw StateError("cannot distill " + id + " in state " + std::string(to_string(inst.state)));
        }
        insts.push_back(std::move(inst));
    }
    const auto iteration = opts.iteration.value_or(pool.loop_state().iteration);
    std::vector<std::optional<DistillationCandidate>> done(ids.size());
    std::vector<std::string> errors(ids.size());
    TokenBucket bucket(opts.rate_limit_per_sec, static_cast<double>(std::max<std::size_t>(1, opts.concurrency)));

    parallel_for(ids.size(), opts.concurrency, [&](std::size_t i) {
        const auto prompt = tmpl.render(insts[i].source_text);
        try {
            bucket.acquire();
            const auto start = std::chrono::steady_clock::now();
            auto resp = with_retry(opts.retry, [&] {
                auto r = teacher.chat(distill_request(prompt, opts));
                if (r.content.empty()) throw ProviderError("teacher returned an empty completion");
                return r;
            });
            const std::chrono::duration<double, std::milli> took = std::chrono::steady_clock::now() - start;
            DistillationCandidate c;
            c.instance_id = ids[i];
            c.iteration = iteration;
            c.prompt = prompt;
            c.candidate_text = std::move(resp.content);
            c.model = resp.model.empty() ? opts.model : resp.model;
            c.latency_ms = opts.record_latency ? took.count() : 0.0;
            c.prompt_tokens = resp.prompt_tokens;
            c.completion_tokens = resp.completion_tokens;
            done[i] = std::move(c);
        } catch (const ProviderError& e) {
            errors[i] = e.what();
        }
    });

    // Pool writes happen here, serially and in input order.
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (done[i]) {
            pool.transaction([&](PoolStore& p) {
                done[i]->created_at = p.now();
                p.put_candidate(*done[i]);
                p.transition(ids[i], InstanceState::distilled);
            });
            out.candidates.push_back(std::move(*done[i]));
        } else {
            FailureRecord f{ids[i], iteration, FailureKind::distillation_failure, errors[i]};
            pool.transaction([&](PoolStore& p) {
                p.record_failure(f);
                p.transition(ids[i], InstanceState::unlabeled);
            });
            log_warning("distillation failed for " + ids[i] + ": " + errors[i]);
            out.failures.push_back(std::move(f));
        }
    }
    return out;
}

}  // namespace kdal
