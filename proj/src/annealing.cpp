#include "tgls/annealing.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "tgls/log.hpp"

namespace tgls {

double temperature(const AnnealingSchedule& schedule, int t) {
    if (t < 0) throw std::invalid_argument("temperature step must be non-negative");
    return std::max(schedule.t_init - schedule.c * static_cast<double>(t), 0.0);
}

double acceptance_prob(double s_new, double s_old, double temp) {
    if (!std::isfinite(s_new) || !std::isfinite(s_old)) {
        throw std::invalid_argument("acceptance requires finite scores");
    }
    if (temp < 0.0) throw std::invalid_argument("temperature must be non-negative");
    if (temp == 0.0) return s_new >= s_old ? 1.0 : 0.0;
    return std::min(1.0, std::exp((s_new - s_old) / temp));
}

const char* edit_kind_name(EditKind kind) {
    switch (kind) {
        case EditKind::kReplace: return "replace";
        case EditKind::kInsert: return "insert";
        case EditKind::kDelete: return "delete";
        case EditKind::kRule: return "rule";
        case EditKind::kNone: return "none";
    }
    return "none";
}

void RuleTable::add_rule(Rule rule) {
    int id = static_cast<int>(rules_.size());
    index_[rule.source.front()].push_back(id);
    rules_.push_back(std::move(rule));
}

RuleTable RuleTable::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs,
                                const Vocabulary& vocab, int max_len) {
    RuleTable table;
    std::set<std::pair<std::vector<TokenId>, std::vector<TokenId>>> seen;
    for (const auto& [source_text, target_text] : pairs) {
        Rule rule;
        rule.source = tokenize(source_text, vocab, max_len).ids;
        rule.target = tokenize(target_text, vocab, max_len).ids;
        if (rule.source.empty()) {
            throw std::runtime_error("rule with empty source phrase: '" + source_text + "'");
        }
        if (!seen.insert({rule.source, rule.target}).second) continue;
        table.add_rule(std::move(rule));
    }
    return table;
}

RuleTable RuleTable::load(const std::string& path, const Vocabulary& vocab, int max_len) {
    std::vector<std::pair<std::string, std::string>> pairs;
    size_t line_no = 0;
    for (const auto& line : read_lines(path)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw std::runtime_error("rule table line " + std::to_string(line_no) +
                                     " has no tab separator in " + path);
        }
        pairs.emplace_back(line.substr(0, tab), line.substr(tab + 1));
    }
    try {
        return from_pairs(pairs, vocab, max_len);
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " while loading " + path);
    }
}

std::vector<std::pair<int, int>> RuleTable::matches(const Sentence& y) const {
    std::vector<std::pair<int, int>> found;
    for (size_t pos = 0; pos < y.ids.size(); ++pos) {
        auto it = index_.find(y.ids[pos]);
        if (it == index_.end()) continue;
        for (int id : it->second) {
            const Rule& rule = rules_[static_cast<size_t>(id)];
            if (pos + rule.source.size() > y.ids.size()) continue;
            if (!std::equal(rule.source.begin(), rule.source.end(), y.ids.begin() +
                            static_cast<std::ptrdiff_t>(pos))) {
                continue;
            }
            if (rule.source == rule.target) continue;
            found.emplace_back(id, static_cast<int>(pos));
        }
    }
    return found;
}

Sentence apply_rule(const Sentence& y, const Rule& rule, int position) {
    auto pos = static_cast<size_t>(position);
    if (pos + rule.source.size() > y.ids.size()) {
        throw std::out_of_range("rule application past the end of the sentence");
    }
    Sentence out;
    out.ids.reserve(y.ids.size() - rule.source.size() + rule.target.size());
    out.ids.insert(out.ids.end(), y.ids.begin(), y.ids.begin() + static_cast<std::ptrdiff_t>(pos));
    out.ids.insert(out.ids.end(), rule.target.begin(), rule.target.end());
    out.ids.insert(out.ids.end(),
                   y.ids.begin() + static_cast<std::ptrdiff_t>(pos + rule.source.size()),
                   y.ids.end());
    return out;
}

namespace {

// Sample an index proportionally to the candidates' totals; fall back to a
// uniform draw when every total is zero.
size_t select_candidate(const std::vector<ScoreBreakdown>& scores, bool argmax, Rng& rng) {
    if (argmax) {
        size_t best = 0;
        for (size_t i = 1; i < scores.size(); ++i) {
            if (scores[i].total > scores[best].total) best = i;
        }
        return best;
    }
    double sum = 0.0;
    for (const auto& s : scores) sum += s.total;
    if (sum <= 0.0) return uniform_index(rng, scores.size());
    double u = uniform01(rng) * sum;
    double acc = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        acc += scores[i].total;
        if (u < acc) return i;
    }
    return scores.size() - 1;
}

ProposeResult identity_proposal(const Sentence& y, const Sentence& x, const KeywordSet& keywords,
                                const SearchContext& ctx, EditKind kind, int position) {
    ProposeResult r;
    r.candidate = y;
    r.op.kind = kind;
    r.op.position = position;
    r.op.degenerate = true;
    r.score = ctx.objective->score(y, x, keywords);
    return r;
}

}  // namespace

ProposeResult propose(const Sentence& y, const Sentence& x, const KeywordSet& keywords,
                      const SearchContext& ctx, const ProposalConfig& cfg, Rng& rng) {
    if (ctx.objective == nullptr || ctx.fwd == nullptr || ctx.bwd == nullptr) {
        throw std::invalid_argument("search context is missing scorers");
    }
    if (cfg.top_k < 1) throw std::invalid_argument("proposal top_k must be >= 1");
    if (y.empty()) throw std::invalid_argument("cannot edit an empty sentence");

    std::vector<std::pair<int, int>> rule_matches;
    if (ctx.rules != nullptr && !ctx.rules->empty()) {
        for (auto [id, pos] : ctx.rules->matches(y)) {
            const Rule& rule = ctx.rules->rule(id);
            size_t new_len = y.ids.size() - rule.source.size() + rule.target.size();
            if (new_len >= 1 && new_len <= static_cast<size_t>(cfg.max_len)) {
                rule_matches.emplace_back(id, pos);
            }
        }
    }

    std::vector<EditKind> ops = {EditKind::kReplace};
    if (y.size() >= 2) ops.push_back(EditKind::kDelete);
    if (static_cast<int>(y.size()) < cfg.max_len) ops.push_back(EditKind::kInsert);
    if (!rule_matches.empty()) ops.push_back(EditKind::kRule);

    EditKind kind = ops[uniform_index(rng, ops.size())];

    switch (kind) {
        case EditKind::kReplace: {
            int position = static_cast<int>(uniform_index(rng, y.size()));
            std::vector<TokenId> left(y.ids.begin(), y.ids.begin() + position);
            std::vector<TokenId> right(y.ids.begin() + position + 1, y.ids.end());
            auto posterior = word_posterior(*ctx.fwd, *ctx.bwd, left, right, cfg.top_k);

            std::vector<Sentence> candidates;
            std::vector<TokenId> tokens;
            for (const auto& [w, weight] : posterior) {
                if (w == y.ids[static_cast<size_t>(position)]) continue;
                Sentence cand = y;
                cand.ids[static_cast<size_t>(position)] = w;
                candidates.push_back(std::move(cand));
                tokens.push_back(w);
            }
            if (candidates.empty()) {
                return identity_proposal(y, x, keywords, ctx, EditKind::kReplace, position);
            }
            std::vector<ScoreBreakdown> scores;
            scores.reserve(candidates.size());
            for (const auto& cand : candidates) {
                scores.push_back(ctx.objective->score(cand, x, keywords));
            }
            size_t pick = select_candidate(scores, cfg.argmax_selection, rng);
            ProposeResult r;
            r.candidate = std::move(candidates[pick]);
            r.op.kind = EditKind::kReplace;
            r.op.position = position;
            r.op.token = tokens[pick];
            r.score = scores[pick];
            return r;
        }
        case EditKind::kInsert: {
            int position = static_cast<int>(uniform_index(rng, y.size() + 1));
            std::vector<TokenId> left(y.ids.begin(), y.ids.begin() + position);
            std::vector<TokenId> right(y.ids.begin() + position, y.ids.end());
            auto posterior = word_posterior(*ctx.fwd, *ctx.bwd, left, right, cfg.top_k);

            std::vector<Sentence> candidates;
            std::vector<TokenId> tokens;
            for (const auto& [w, weight] : posterior) {
                Sentence cand = y;
                cand.ids.insert(cand.ids.begin() + position, w);
                candidates.push_back(std::move(cand));
                tokens.push_back(w);
            }
            if (candidates.empty()) {
                return identity_proposal(y, x, keywords, ctx, EditKind::kInsert, position);
            }
            std::vector<ScoreBreakdown> scores;
            scores.reserve(candidates.size());
            for (const auto& cand : candidates) {
                scores.push_back(ctx.objective->score(cand, x, keywords));
            }
            size_t pick = select_candidate(scores, cfg.argmax_selection, rng);
            ProposeResult r;
            r.candidate = std::move(candidates[pick]);
            r.op.kind = EditKind::kInsert;
            r.op.position = position;
            r.op.token = tokens[pick];
            r.score = scores[pick];
            return r;
        }
        case EditKind::kDelete: {
            int position = static_cast<int>(uniform_index(rng, y.size()));
            ProposeResult r;
            r.candidate = y;
            r.candidate.ids.erase(r.candidate.ids.begin() + position);
            r.op.kind = EditKind::kDelete;
            r.op.position = position;
            r.score = ctx.objective->score(r.candidate, x, keywords);
            return r;
        }
        case EditKind::kRule: {
            auto [id, pos] = rule_matches[uniform_index(rng, rule_matches.size())];
            ProposeResult r;
            r.candidate = apply_rule(y, ctx.rules->rule(id), pos);
            r.op.kind = EditKind::kRule;
            r.op.position = pos;
            r.op.rule_id = id;
            r.score = ctx.objective->score(r.candidate, x, keywords);
            return r;
        }
        case EditKind::kNone: break;
    }
    return identity_proposal(y, x, keywords, ctx, EditKind::kNone, 0);
}

SearchResult sa_search(const Sentence& x, const Sentence& y0, const KeywordSet& keywords,
                       const SearchContext& ctx, const AnnealingSchedule& schedule,
                       const ProposalConfig& cfg, Rng& rng) {
    if (y0.empty()) throw std::invalid_argument("sa_search needs a non-empty start sentence");
    if (static_cast<int>(y0.size()) > cfg.max_len) {
        throw std::invalid_argument("start sentence exceeds max_len");
    }
    if (schedule.t_init < 0.0 || schedule.c < 0.0 || schedule.max_steps < 0) {
        throw std::invalid_argument("annealing schedule fields must be non-negative");
    }

    SearchResult result;
    result.trace.x = x;
    result.trace.y0 = y0;
    result.trace.y0_score = ctx.objective->score(y0, x, keywords);

    Sentence current = y0;
    ScoreBreakdown current_score = result.trace.y0_score;
    result.best = y0;
    result.best_score = current_score;
    result.trace.best_step = 0;

    for (int t = 1; t <= schedule.max_steps; ++t) {
        double temp = temperature(schedule, t);
        ProposeResult prop = propose(current, x, keywords, ctx, cfg, rng);
        double p = acceptance_prob(prop.score.total, current_score.total, temp);
        bool accepted = uniform01(rng) < p;

        TraceStep step;
        step.step = t;
        step.temperature = temp;
        step.op = prop.op;
        step.proposal = prop.candidate;
        step.current = current_score;
        step.proposed = prop.score;
        step.accept_prob = p;
        step.accepted = accepted;
        result.trace.steps.push_back(std::move(step));

        if (accepted) {
            current = prop.candidate;
            current_score = prop.score;
            if (current_score.total > result.best_score.total) {
                result.best = current;
                result.best_score = current_score;
                result.trace.best_step = t;
            }
        }
    }
    return result;
}

std::string trace_to_json_lines(const SearchTrace& trace, const Vocabulary& vocab) {
    auto breakdown = [](const ScoreBreakdown& b) {
        return nlohmann::ordered_json{{"s_lm", b.s_lm},
                                      {"s_word", b.s_word},
                                      {"s_sent", b.s_sent},
                                      {"s_task", b.s_task},
                                      {"total", b.total}};
    };
    nlohmann::ordered_json header{{"kind", "header"},
                                  {"input", detokenize(trace.x, vocab)},
                                  {"start", detokenize(trace.y0, vocab)},
                                  {"start_score", breakdown(trace.y0_score)},
                                  {"steps", trace.steps.size()},
                                  {"best_step", trace.best_step}};
    std::string out = header.dump();
    out.push_back('\n');
    for (const auto& step : trace.steps) {
        nlohmann::ordered_json line{{"kind", "step"},
                                    {"step", step.step},
                                    {"temperature", step.temperature},
                                    {"op", edit_kind_name(step.op.kind)},
                                    {"position", step.op.position},
                                    {"degenerate", step.op.degenerate},
                                    {"proposal", detokenize(step.proposal, vocab)},
                                    {"current", breakdown(step.current)},
                                    {"proposed", breakdown(step.proposed)},
                                    {"accept_prob", step.accept_prob},
                                    {"accepted", step.accepted}};
        if (step.op.token >= 0) line["token"] = vocab.surface(step.op.token);
        if (step.op.rule_id >= 0) line["rule_id"] = step.op.rule_id;
        out += line.dump();
        out.push_back('\n');
    }
    return out;
}

}  // namespace tgls
